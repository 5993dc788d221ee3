#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pomo3d/camera.hpp"
#include "pomo3d/classes.hpp"
#include "pomo3d/image_io.hpp"

namespace pomo3d {

struct DatasetConfig;
struct RenderConfig;
class Rng;

struct PoseLabel {
    double yaw = 0.0;    // radians
    double pitch = 0.0;  // radians

    CameraPose camera(const RenderConfig& render) const;
    bool operator==(const PoseLabel&) const = default;
};

/// Binary masks for every raw class, class-major, one byte per pixel.
struct MaskStack {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;

    MaskStack() = default;
    MaskStack(int h, int w) : height(h), width(w), bits(static_cast<size_t>(kRawClasses) * h * w, 0) {}

    std::uint8_t& at(int cls, int row, int col) {
        return bits[(static_cast<size_t>(cls) * height + row) * width + col];
    }
    std::uint8_t at(int cls, int row, int col) const {
        return bits[(static_cast<size_t>(cls) * height + row) * width + col];
    }
    bool any(int cls) const;
    std::int64_t count(int cls) const;
};

using AttributeFlags = std::map<std::string, bool>;

struct RawAnnotatedSample {
    std::string id;
    RgbImage rgb;
    MaskStack masks;
    AttributeFlags attributes;
    std::optional<PoseLabel> pose;

    /// Throws InvalidInput if the masks do not share the image resolution.
    void validate() const;
    std::vector<AccessoryClass> accessories() const;
};

enum class DataGroup : std::uint8_t { AccessorySegmaps, PortraitSegmaps, RgbImages };
enum class RecordOrigin : std::uint8_t { Original, Mirrored, Duplicated, Synthetic };

std::string_view group_name(DataGroup group);
std::string_view origin_name(RecordOrigin origin);
DataGroup parse_group(std::string_view name);
RecordOrigin parse_origin(std::string_view name);

/// One training record. Segmap groups carry `labels` (accessory ids 0..4 or
/// portrait ids 0..19); the RGB group carries `rgb`.
struct PacMaskRecord {
    std::string id;
    std::string source_id;
    DataGroup group = DataGroup::PortraitSegmaps;
    RecordOrigin origin = RecordOrigin::Original;
    LabelMap labels;
    RgbImage rgb;
    PoseLabel pose;
    AttributeFlags attributes;
    std::vector<AccessoryClass> source_accessories;
    AccessoryClass accessory = kNone;  // accessory group only
};

struct PacMaskGroups {
    std::vector<PacMaskRecord> accessory;
    std::vector<PacMaskRecord> portrait;
    std::vector<PacMaskRecord> rgb;

    size_t total() const { return accessory.size() + portrait.size() + rgb.size(); }
    const std::vector<PacMaskRecord>& group(DataGroup g) const;
};

/// Collapses per-class masks into raw ids. Each pixel takes the highest-priority
/// class present (raw_priority_order); pixels with no mask are background.
LabelMap reorder_semantics(const MaskStack& masks);

/// Relabels raw ids into the parsed space, splitting the nose at its centroid
/// column: pixels strictly left become nose_left, strictly right nose_right,
/// and pixels on an integral centroid column split top/bottom.
LabelMap split_nose(const LabelMap& raw);

/// Parsed map -> accessory-only map for one type (ids 0 or `type`).
LabelMap extract_accessory(const LabelMap& parsed, AccessoryClass type);
/// Accessory types present in a parsed map, ascending.
std::vector<AccessoryClass> accessories_present(const LabelMap& parsed);
/// Parsed map without accessories -> portrait ids. Throws InvalidInput if any
/// accessory pixel is present.
LabelMap to_portrait_map(const LabelMap& parsed);

struct ParsedSample {
    std::string id;
    LabelMap parsed;
    RgbImage rgb;
    PoseLabel pose;
    AttributeFlags attributes;
    RecordOrigin origin = RecordOrigin::Original;
};

/// Routes samples into the three groups. Maps with several accessory types
/// yield one accessory map per type.
PacMaskGroups partition_and_extract(std::span<const ParsedSample> samples);

/// max(0, ceil(ratio * max_count) - count).
std::int64_t duplicates_needed(std::int64_t count, std::int64_t max_count, double ratio);

struct BalanceReport {
    std::array<std::int64_t, kAccessoryClasses> before{};
    std::array<std::int64_t, kAccessoryClasses> duplicates{};
};

/// Duplicates accessory records of under-represented types up to the ratio
/// band, then appends a mirrored copy of every record (yaw negated,
/// left/right classes swapped).
PacMaskGroups balance_and_mirror(PacMaskGroups groups, double ratio, Rng& rng, BalanceReport* report = nullptr);

LabelMap mirror_labels(const LabelMap& map, ClassSet set);
PacMaskRecord mirror_record(const PacMaskRecord& record);

/// Mutual information in nats of a joint count or probability table.
/// Single-valued marginals give exactly 0.
double mutual_information(const std::vector<std::vector<double>>& joint);

struct MutualInformationReport {
    std::vector<std::string> accessories;
    std::vector<std::string> attributes;
    std::vector<std::vector<double>> mi;  // [accessory][attribute]
    std::int64_t samples = 0;
};

/// MI between each accessory indicator and each attribute flag, computed over
/// original RGB records (one per source sample).
MutualInformationReport mutual_information_report(std::span<const PacMaskRecord> records);

/// Label resolution of segmaps written by the builder.
struct BuildOptions {
    int label_resolution = 32;
    int rgb_resolution = 128;
};

/// Full pipeline over raw samples: reorder, split nose, resample, partition,
/// balance and mirror. Samples without a pose label get a frontal pose.
PacMaskGroups build_pacmask(std::span<const RawAnnotatedSample> samples, const DatasetConfig& config,
                            const BuildOptions& options, Rng& rng);

/// Incremental form of build_pacmask for large inputs.
class PacMaskBuilder {
public:
    PacMaskBuilder(const DatasetConfig& config, const BuildOptions& options);
    void add(const RawAnnotatedSample& sample, RecordOrigin origin = RecordOrigin::Original);
    PacMaskGroups finish(Rng& rng);

private:
    double ratio_;
    BuildOptions options_;
    PacMaskGroups groups_;
};

/// Writes PNG payloads plus index.jsonl. Output is a pure function of `groups`.
void write_pacmask(const std::filesystem::path& dir, const PacMaskGroups& groups);
/// Throws CorruptionError on malformed index lines or missing payloads.
PacMaskGroups load_pacmask(const std::filesystem::path& dir);

/// Raw sample directory: <id>/rgb.png, <id>/<raw class>.png, index.jsonl.
void write_raw_samples(const std::filesystem::path& dir, std::span<const RawAnnotatedSample> samples);
std::vector<RawAnnotatedSample> load_raw_samples(const std::filesystem::path& dir);

}  // namespace pomo3d
