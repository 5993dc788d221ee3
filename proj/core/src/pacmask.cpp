#include "pomo3d/pacmask.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "pomo3d/config.hpp"
#include "pomo3d/errors.hpp"
#include "pomo3d/rng.hpp"

namespace pomo3d {
namespace fs = std::filesystem;
using nlohmann::json;

CameraPose PoseLabel::camera(const RenderConfig& render) const { return CameraPose::orbit(yaw, pitch, render); }

bool MaskStack::any(int cls) const { return count(cls) > 0; }

std::int64_t MaskStack::count(int cls) const {
    const size_t plane = static_cast<size_t>(height) * width;
    auto begin = bits.begin() + static_cast<std::ptrdiff_t>(cls * plane);
    return std::count_if(begin, begin + static_cast<std::ptrdiff_t>(plane), [](std::uint8_t b) { return b != 0; });
}

void RawAnnotatedSample::validate() const {
    if (masks.height != rgb.height || masks.width != rgb.width) {
        throw InvalidInput("sample " + id + ": masks do not share the image resolution");
    }
    if (masks.bits.size() != static_cast<size_t>(kRawClasses) * masks.height * masks.width) {
        throw InvalidInput("sample " + id + ": mask stack has the wrong size");
    }
}

std::vector<AccessoryClass> RawAnnotatedSample::accessories() const {
    std::vector<AccessoryClass> out;
    for (int c = kRawEyewear; c <= kRawNecklace; ++c) {
        if (masks.any(c)) out.push_back(*raw_accessory(c));
    }
    return out;
}

std::string_view group_name(DataGroup group) {
    switch (group) {
        case DataGroup::AccessorySegmaps: return "accessory_segmaps";
        case DataGroup::PortraitSegmaps: return "portrait_segmaps";
        case DataGroup::RgbImages: return "rgb_images";
    }
    return "";
}

std::string_view origin_name(RecordOrigin origin) {
    switch (origin) {
        case RecordOrigin::Original: return "original";
        case RecordOrigin::Mirrored: return "mirrored";
        case RecordOrigin::Duplicated: return "duplicated";
        case RecordOrigin::Synthetic: return "synthetic";
    }
    return "";
}

DataGroup parse_group(std::string_view name) {
    for (auto g : {DataGroup::AccessorySegmaps, DataGroup::PortraitSegmaps, DataGroup::RgbImages}) {
        if (group_name(g) == name) return g;
    }
    throw CorruptionError("unknown data group '" + std::string(name) + "'");
}

RecordOrigin parse_origin(std::string_view name) {
    for (auto o : {RecordOrigin::Original, RecordOrigin::Mirrored, RecordOrigin::Duplicated, RecordOrigin::Synthetic}) {
        if (origin_name(o) == name) return o;
    }
    throw CorruptionError("unknown record origin '" + std::string(name) + "'");
}

const std::vector<PacMaskRecord>& PacMaskGroups::group(DataGroup g) const {
    switch (g) {
        case DataGroup::AccessorySegmaps: return accessory;
        case DataGroup::PortraitSegmaps: return portrait;
        default: return rgb;
    }
}

LabelMap reorder_semantics(const MaskStack& masks) {
    LabelMap out(masks.height, masks.width, kRawBackground);
    const auto& order = raw_priority_order();
    for (int r = 0; r < masks.height; ++r) {
        for (int c = 0; c < masks.width; ++c) {
            for (auto cls : order) {
                if (masks.at(cls, r, c)) {
                    out.at(r, c) = cls;
                    break;
                }
            }
        }
    }
    return out;
}

LabelMap split_nose(const LabelMap& raw) {
    std::int64_t n = 0, col_sum = 0, row_min = raw.height, row_max = -1;
    for (int r = 0; r < raw.height; ++r) {
        for (int c = 0; c < raw.width; ++c) {
            if (raw.at(r, c) == kRawNose) {
                ++n;
                col_sum += c;
                row_min = std::min<std::int64_t>(row_min, r);
                row_max = std::max<std::int64_t>(row_max, r);
            }
        }
    }
    LabelMap out(raw.height, raw.width);
    // Compare 2*n*c with 2*col_sum to avoid rounding in the centroid.
    for (int r = 0; r < raw.height; ++r) {
        for (int c = 0; c < raw.width; ++c) {
            const int v = raw.at(r, c);
            if (v != kRawNose) {
                out.at(r, c) = static_cast<std::uint8_t>(raw_to_parsed(v));
                continue;
            }
            const std::int64_t lhs = static_cast<std::int64_t>(c) * n;
            if (lhs < col_sum) {
                out.at(r, c) = kNoseLeft;
            } else if (lhs > col_sum) {
                out.at(r, c) = kNoseRight;
            } else {
                out.at(r, c) = 2 * r < row_min + row_max + 1 ? kNoseLeft : kNoseRight;
            }
        }
    }
    return out;
}

LabelMap extract_accessory(const LabelMap& parsed, AccessoryClass type) {
    LabelMap out(parsed.height, parsed.width, kNone);
    const int target = kParsedAccessoryBase + type - 1;
    for (size_t i = 0; i < parsed.size(); ++i) {
        if (parsed.labels[i] == target) out.labels[i] = type;
    }
    return out;
}

std::vector<AccessoryClass> accessories_present(const LabelMap& parsed) {
    std::array<bool, kAccessoryClasses> seen{};
    for (auto v : parsed.labels) {
        if (is_parsed_accessory(v)) seen[v - kParsedAccessoryBase + 1] = true;
    }
    std::vector<AccessoryClass> out;
    for (int a = 1; a < kAccessoryClasses; ++a) {
        if (seen[a]) out.push_back(static_cast<AccessoryClass>(a));
    }
    return out;
}

LabelMap to_portrait_map(const LabelMap& parsed) {
    for (auto v : parsed.labels) {
        if (v >= kPortraitClasses) throw InvalidInput("portrait map contains accessory pixels");
    }
    return parsed;
}

PacMaskGroups partition_and_extract(std::span<const ParsedSample> samples) {
    PacMaskGroups groups;
    for (const auto& s : samples) {
        const auto types = accessories_present(s.parsed);
        PacMaskRecord base;
        base.source_id = s.id;
        base.origin = s.origin;
        base.pose = s.pose;
        base.attributes = s.attributes;
        base.source_accessories = types;

        if (types.empty()) {
            PacMaskRecord rec = base;
            rec.id = s.id + "_por";
            rec.group = DataGroup::PortraitSegmaps;
            rec.labels = to_portrait_map(s.parsed);
            groups.portrait.push_back(std::move(rec));
        } else {
            for (auto t : types) {
                PacMaskRecord rec = base;
                rec.id = s.id + "_acc_" + std::string(accessory_class_name(t));
                rec.group = DataGroup::AccessorySegmaps;
                rec.accessory = t;
                rec.labels = extract_accessory(s.parsed, t);
                groups.accessory.push_back(std::move(rec));
            }
        }
        PacMaskRecord rec = base;
        rec.id = s.id + "_rgb";
        rec.group = DataGroup::RgbImages;
        rec.rgb = s.rgb;
        groups.rgb.push_back(std::move(rec));
    }
    return groups;
}

std::int64_t duplicates_needed(std::int64_t count, std::int64_t max_count, double ratio) {
    const auto target = static_cast<std::int64_t>(std::ceil(ratio * static_cast<double>(max_count) - 1e-9));
    return std::max<std::int64_t>(0, target - count);
}

LabelMap mirror_labels(const LabelMap& map, ClassSet set) {
    LabelMap out = flip_horizontal(map);
    if (set == ClassSet::Portrait) {
        for (auto& v : out.labels) v = static_cast<std::uint8_t>(mirror_portrait_class(v));
    }
    return out;
}

PacMaskRecord mirror_record(const PacMaskRecord& record) {
    PacMaskRecord out = record;
    out.id = record.id + "_mir";
    out.origin = RecordOrigin::Mirrored;
    out.pose.yaw = -record.pose.yaw;
    switch (record.group) {
        case DataGroup::AccessorySegmaps: out.labels = mirror_labels(record.labels, ClassSet::Accessory); break;
        case DataGroup::PortraitSegmaps: out.labels = mirror_labels(record.labels, ClassSet::Portrait); break;
        case DataGroup::RgbImages: out.rgb = flip_horizontal(record.rgb); break;
    }
    return out;
}

PacMaskGroups balance_and_mirror(PacMaskGroups groups, double ratio, Rng& rng, BalanceReport* report) {
    BalanceReport local;
    std::array<std::vector<size_t>, kAccessoryClasses> by_type;
    for (size_t i = 0; i < groups.accessory.size(); ++i) by_type[groups.accessory[i].accessory].push_back(i);
    std::int64_t max_count = 0;
    for (int a = 1; a < kAccessoryClasses; ++a) {
        local.before[a] = static_cast<std::int64_t>(by_type[a].size());
        max_count = std::max(max_count, local.before[a]);
    }
    for (int a = 1; a < kAccessoryClasses; ++a) {
        if (by_type[a].empty()) continue;  // nothing to duplicate from
        const auto need = duplicates_needed(local.before[a], max_count, ratio);
        local.duplicates[a] = need;
        for (std::int64_t k = 0; k < need; ++k) {
            const auto& src = groups.accessory[by_type[a][rng.uniform_int(static_cast<std::int64_t>(by_type[a].size()))]];
            PacMaskRecord dup = src;
            dup.id = src.id + "_dup" + std::to_string(k);
            dup.origin = RecordOrigin::Duplicated;
            groups.accessory.push_back(std::move(dup));
        }
    }

    for (auto* group : {&groups.accessory, &groups.portrait, &groups.rgb}) {
        const size_t n = group->size();
        group->reserve(2 * n);
        for (size_t i = 0; i < n; ++i) group->push_back(mirror_record((*group)[i]));
    }
    if (report) *report = local;
    return groups;
}

double mutual_information(const std::vector<std::vector<double>>& joint) {
    double total = 0.0;
    const size_t nx = joint.size();
    const size_t ny = nx ? joint[0].size() : 0;
    std::vector<double> px(nx, 0.0), py(ny, 0.0);
    for (size_t i = 0; i < nx; ++i) {
        if (joint[i].size() != ny) throw InvalidInput("joint table is ragged");
        for (size_t j = 0; j < ny; ++j) {
            if (joint[i][j] < 0.0) throw InvalidInput("joint table has negative entries");
            px[i] += joint[i][j];
            py[j] += joint[i][j];
            total += joint[i][j];
        }
    }
    if (total <= 0.0) return 0.0;
    auto support = [](const std::vector<double>& p) { return std::count_if(p.begin(), p.end(), [](double v) { return v > 0; }); };
    if (support(px) < 2 || support(py) < 2) return 0.0;
    double mi = 0.0;
    for (size_t i = 0; i < nx; ++i) {
        for (size_t j = 0; j < ny; ++j) {
            const double pij = joint[i][j] / total;
            if (pij <= 0.0) continue;
            mi += pij * std::log(pij / ((px[i] / total) * (py[j] / total)));
        }
    }
    return std::max(0.0, mi);
}

MutualInformationReport mutual_information_report(std::span<const PacMaskRecord> records) {
    MutualInformationReport report;
    std::vector<const PacMaskRecord*> rows;
    std::map<std::string, bool> attribute_names;
    for (const auto& r : records) {
        if (r.group != DataGroup::RgbImages || r.origin == RecordOrigin::Mirrored ||
            r.origin == RecordOrigin::Duplicated) {
            continue;
        }
        rows.push_back(&r);
        for (const auto& [k, v] : r.attributes) attribute_names[k] = true;
    }
    for (int a = 1; a < kAccessoryClasses; ++a) report.accessories.emplace_back(accessory_class_name(a));
    for (const auto& [k, v] : attribute_names) report.attributes.push_back(k);
    report.samples = static_cast<std::int64_t>(rows.size());

    for (int a = 1; a < kAccessoryClasses; ++a) {
        std::vector<double> row;
        for (const auto& attr : report.attributes) {
            std::vector<std::vector<double>> joint(2, std::vector<double>(2, 0.0));
            for (const auto* r : rows) {
                const bool has = std::find(r->source_accessories.begin(), r->source_accessories.end(), a) !=
                                 r->source_accessories.end();
                auto it = r->attributes.find(attr);
                const bool flag = it != r->attributes.end() && it->second;
                joint[has ? 1 : 0][flag ? 1 : 0] += 1.0;
            }
            row.push_back(mutual_information(joint));
        }
        report.mi.push_back(std::move(row));
    }
    return report;
}

PacMaskBuilder::PacMaskBuilder(const DatasetConfig& config, const BuildOptions& options)
    : ratio_(config.balance_ratio), options_(options) {}

void PacMaskBuilder::add(const RawAnnotatedSample& sample, RecordOrigin origin) {
    sample.validate();
    ParsedSample parsed;
    parsed.id = sample.id;
    parsed.parsed = resize_nearest(split_nose(reorder_semantics(sample.masks)), options_.label_resolution,
                                   options_.label_resolution);
    parsed.rgb = resize_area(sample.rgb, options_.rgb_resolution, options_.rgb_resolution);
    parsed.pose = sample.pose.value_or(PoseLabel{});
    parsed.attributes = sample.attributes;
    parsed.origin = origin;
    auto part = partition_and_extract(std::span<const ParsedSample>(&parsed, 1));
    for (auto& r : part.accessory) groups_.accessory.push_back(std::move(r));
    for (auto& r : part.portrait) groups_.portrait.push_back(std::move(r));
    for (auto& r : part.rgb) groups_.rgb.push_back(std::move(r));
}

PacMaskGroups PacMaskBuilder::finish(Rng& rng) { return balance_and_mirror(std::move(groups_), ratio_, rng); }

PacMaskGroups build_pacmask(std::span<const RawAnnotatedSample> samples, const DatasetConfig& config,
                            const BuildOptions& options, Rng& rng) {
    PacMaskBuilder builder(config, options);
    for (const auto& s : samples) builder.add(s);
    return builder.finish(rng);
}

namespace {

json attributes_json(const AttributeFlags& attrs) {
    json j = json::object();
    for (const auto& [k, v] : attrs) j[k] = v;
    return j;
}

AttributeFlags attributes_from(const json& j) {
    AttributeFlags attrs;
    for (auto it = j.begin(); it != j.end(); ++it) attrs[it.key()] = it.value().get<bool>();
    return attrs;
}

std::string group_dir(DataGroup g) { return std::string(group_name(g)); }

}  // namespace

void write_pacmask(const fs::path& dir, const PacMaskGroups& groups) {
    for (auto g : {DataGroup::AccessorySegmaps, DataGroup::PortraitSegmaps, DataGroup::RgbImages}) {
        fs::create_directories(dir / group_dir(g));
    }
    std::ofstream index(dir / "index.jsonl", std::ios::binary);
    if (!index) throw Error("cannot write " + (dir / "index.jsonl").string());
    for (auto g : {DataGroup::AccessorySegmaps, DataGroup::PortraitSegmaps, DataGroup::RgbImages}) {
        for (const auto& r : groups.group(g)) {
            const std::string file = group_dir(g) + "/" + r.id + ".png";
            write_file(dir / file, g == DataGroup::RgbImages ? encode_png(r.rgb) : encode_png(r.labels));
            json line;
            line["id"] = r.id;
            line["source_id"] = r.source_id;
            line["group"] = group_name(g);
            line["file"] = file;
            line["origin"] = origin_name(r.origin);
            line["pose"] = {{"yaw", r.pose.yaw}, {"pitch", r.pose.pitch}};
            line["attributes"] = attributes_json(r.attributes);
            json accs = json::array();
            for (auto a : r.source_accessories) accs.push_back(accessory_class_name(a));
            line["source_accessories"] = accs;
            if (g == DataGroup::AccessorySegmaps) line["accessory"] = accessory_class_name(r.accessory);
            index << line.dump() << '\n';
        }
    }
}

namespace {

AccessoryClass accessory_from_name(const std::string& name) {
    for (int a = 0; a < kAccessoryClasses; ++a) {
        if (accessory_class_name(a) == name) return static_cast<AccessoryClass>(a);
    }
    throw CorruptionError("unknown accessory '" + name + "'");
}

}  // namespace

PacMaskGroups load_pacmask(const fs::path& dir) {
    std::ifstream index(dir / "index.jsonl");
    if (!index) throw NotFound("no index.jsonl in " + dir.string());
    PacMaskGroups groups;
    std::string line;
    int line_no = 0;
    while (std::getline(index, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            PacMaskRecord r;
            r.id = j.at("id").get<std::string>();
            r.source_id = j.at("source_id").get<std::string>();
            r.group = parse_group(j.at("group").get<std::string>());
            r.origin = parse_origin(j.at("origin").get<std::string>());
            r.pose = {j.at("pose").at("yaw").get<double>(), j.at("pose").at("pitch").get<double>()};
            r.attributes = attributes_from(j.at("attributes"));
            for (const auto& a : j.at("source_accessories")) r.source_accessories.push_back(accessory_from_name(a));
            const fs::path file = dir / j.at("file").get<std::string>();
            if (!fs::exists(file)) throw CorruptionError("missing payload " + file.string());
            const auto bytes = read_file(file);
            switch (r.group) {
                case DataGroup::AccessorySegmaps:
                    r.accessory = accessory_from_name(j.at("accessory").get<std::string>());
                    r.labels = decode_label_png(bytes);
                    groups.accessory.push_back(std::move(r));
                    break;
                case DataGroup::PortraitSegmaps:
                    r.labels = decode_label_png(bytes);
                    groups.portrait.push_back(std::move(r));
                    break;
                case DataGroup::RgbImages:
                    r.rgb = decode_rgb_png(bytes);
                    groups.rgb.push_back(std::move(r));
                    break;
            }
        } catch (const json::exception& e) {
            throw CorruptionError("index.jsonl line " + std::to_string(line_no) + ": " + e.what());
        } catch (const InvalidInput& e) {
            throw CorruptionError("index.jsonl line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return groups;
}

void write_raw_samples(const fs::path& dir, std::span<const RawAnnotatedSample> samples) {
    fs::create_directories(dir);
    std::ofstream index(dir / "index.jsonl", std::ios::binary);
    if (!index) throw Error("cannot write " + (dir / "index.jsonl").string());
    for (const auto& s : samples) {
        s.validate();
        fs::create_directories(dir / s.id);
        write_file(dir / s.id / "rgb.png", encode_png(s.rgb));
        json masks = json::array();
        for (int c = 0; c < kRawClasses; ++c) {
            if (!s.masks.any(c)) continue;
            LabelMap m(s.masks.height, s.masks.width);
            for (int r = 0; r < m.height; ++r) {
                for (int col = 0; col < m.width; ++col) m.at(r, col) = s.masks.at(c, r, col) ? 255 : 0;
            }
            write_file(dir / s.id / (std::string(raw_class_name(c)) + ".png"), encode_png(m));
            masks.push_back(raw_class_name(c));
        }
        json line{{"id", s.id}, {"attributes", attributes_json(s.attributes)}, {"masks", masks}};
        if (s.pose) line["pose"] = {{"yaw", s.pose->yaw}, {"pitch", s.pose->pitch}};
        index << line.dump() << '\n';
    }
}

std::vector<RawAnnotatedSample> load_raw_samples(const fs::path& dir) {
    std::ifstream index(dir / "index.jsonl");
    if (!index) throw NotFound("no index.jsonl in " + dir.string());
    std::vector<RawAnnotatedSample> out;
    std::string line;
    while (std::getline(index, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw CorruptionError(std::string("raw index: ") + e.what());
        }
        RawAnnotatedSample s;
        s.id = j.at("id").get<std::string>();
        s.rgb = decode_rgb_png(read_file(dir / s.id / "rgb.png"));
        s.masks = MaskStack(s.rgb.height, s.rgb.width);
        s.attributes = attributes_from(j.value("attributes", json::object()));
        if (j.contains("pose")) s.pose = PoseLabel{j["pose"].at("yaw").get<double>(), j["pose"].at("pitch").get<double>()};
        for (const auto& name : j.at("masks")) {
            int cls = -1;
            for (int c = 0; c < kRawClasses; ++c) {
                if (raw_class_name(c) == name.get<std::string>()) cls = c;
            }
            if (cls < 0) throw CorruptionError("unknown raw class " + name.get<std::string>());
            const auto m = decode_label_png(read_file(dir / s.id / (name.get<std::string>() + ".png")));
            if (m.height != s.rgb.height || m.width != s.rgb.width) {
                throw InvalidInput("sample " + s.id + ": masks do not share the image resolution");
            }
            for (int r = 0; r < m.height; ++r) {
                for (int c = 0; c < m.width; ++c) s.masks.at(cls, r, c) = m.at(r, c) ? 1 : 0;
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace pomo3d
