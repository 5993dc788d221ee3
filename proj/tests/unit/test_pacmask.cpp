#include <cmath>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "pomo3d/errors.hpp"
#include "pomo3d/pacmask.hpp"
#include "pomo3d/synthetic.hpp"

using namespace pomo3d;

namespace {

MaskStack random_stack(Rng& rng, int h, int w, double density) {
    MaskStack m(h, w);
    for (int cls = 0; cls < kRawClasses; ++cls)
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) m.at(cls, r, c) = rng.bernoulli(density) ? 1 : 0;
    return m;
}

ParsedSample parsed_sample(const std::string& id, const LabelMap& parsed) {
    ParsedSample s;
    s.id = id;
    s.parsed = parsed;
    s.rgb = RgbImage(parsed.height, parsed.width);
    return s;
}

}  // namespace

TEST(Reorder, AccessoriesOutrankEverythingAndLabelsAreSetMasks) {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        auto stack = random_stack(rng, 12, 12, 0.15);
        auto out = reorder_semantics(stack);
        for (int r = 0; r < 12; ++r)
            for (int c = 0; c < 12; ++c) {
                const int v = out.at(r, c);
                bool any = false, any_acc = false;
                for (int cls = 0; cls < kRawClasses; ++cls) {
                    any |= stack.at(cls, r, c) != 0;
                    any_acc |= is_raw_accessory(cls) && stack.at(cls, r, c);
                }
                if (!any) {
                    ASSERT_EQ(v, kRawBackground);
                    continue;
                }
                ASSERT_TRUE(stack.at(v, r, c) || v == kRawBackground);
                ASSERT_EQ(is_raw_accessory(v), any_acc);
            }
    }
}

TEST(Reorder, ThinStructuresWinOverRegions) {
    MaskStack m(1, 3);
    m.at(kRawSkin, 0, 0) = m.at(kRawEyeLeft, 0, 0) = 1;
    m.at(kRawHair, 0, 1) = m.at(kRawEarring, 0, 1) = m.at(kRawEarLeft, 0, 1) = 1;
    m.at(kRawCloth, 0, 2) = m.at(kRawNecklace, 0, 2) = 1;
    auto out = reorder_semantics(m);
    EXPECT_EQ(out.at(0, 0), kRawEyeLeft);
    EXPECT_EQ(out.at(0, 1), kRawEarring);
    EXPECT_EQ(out.at(0, 2), kRawNecklace);
}

TEST(Reorder, AccessoryPixelsAreConserved) {
    Rng rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        auto stack = random_stack(rng, 16, 16, 0.2);
        std::int64_t union_count = 0;
        for (int r = 0; r < 16; ++r)
            for (int c = 0; c < 16; ++c) {
                bool acc = false;
                for (int cls = kRawEyewear; cls <= kRawNecklace; ++cls) acc |= stack.at(cls, r, c) != 0;
                union_count += acc;
            }
        auto raw = reorder_semantics(stack);
        auto parsed = split_nose(raw);
        std::int64_t after = 0;
        for (auto v : parsed.labels) after += is_parsed_accessory(v);
        EXPECT_EQ(after, union_count);
        std::int64_t extracted = 0;
        for (auto t : accessories_present(parsed)) {
            auto a = extract_accessory(parsed, t);
            for (auto v : a.labels) extracted += v != kNone;
        }
        EXPECT_EQ(extracted, union_count);
    }
}

TEST(NoseSplit, CentroidColumnDividesLeftAndRight) {
    LabelMap raw(4, 6, kRawSkin);
    // nose at columns 1..4 on rows 1..2: centroid 2.5, no pixel on it
    for (int r = 1; r <= 2; ++r)
        for (int c = 1; c <= 4; ++c) raw.at(r, c) = kRawNose;
    auto out = split_nose(raw);
    for (int r = 1; r <= 2; ++r) {
        EXPECT_EQ(out.at(r, 1), kNoseLeft);
        EXPECT_EQ(out.at(r, 2), kNoseLeft);
        EXPECT_EQ(out.at(r, 3), kNoseRight);
        EXPECT_EQ(out.at(r, 4), kNoseRight);
    }
    EXPECT_EQ(out.at(0, 0), kSkin);
}

TEST(NoseSplit, IntegralCentroidColumnSplitsTopAndBottom) {
    LabelMap raw(6, 5, kRawBackground);
    for (int r = 1; r <= 4; ++r)
        for (int c = 1; c <= 3; ++c) raw.at(r, c) = kRawNose;
    auto out = split_nose(raw);
    EXPECT_EQ(out.at(1, 2), kNoseLeft);
    EXPECT_EQ(out.at(2, 2), kNoseLeft);
    EXPECT_EQ(out.at(3, 2), kNoseRight);
    EXPECT_EQ(out.at(4, 2), kNoseRight);
    std::int64_t left = 0, right = 0;
    for (auto v : out.labels) {
        left += v == kNoseLeft;
        right += v == kNoseRight;
    }
    EXPECT_EQ(left, right);
}

TEST(Partition, RoutesSamplesIntoDisjointGroups) {
    LabelMap plain(4, 4, kSkin);
    LabelMap adorned = plain;
    adorned.at(0, 0) = kParsedAccessoryBase + kEyewear - 1;
    adorned.at(3, 3) = kParsedAccessoryBase + kNecklace - 1;
    std::vector<ParsedSample> samples{parsed_sample("a", plain), parsed_sample("b", adorned)};
    auto g = partition_and_extract(samples);
    ASSERT_EQ(g.portrait.size(), 1u);
    ASSERT_EQ(g.accessory.size(), 2u);
    ASSERT_EQ(g.rgb.size(), 2u);
    EXPECT_EQ(g.portrait[0].source_id, "a");
    EXPECT_EQ(g.accessory[0].accessory, kEyewear);
    EXPECT_EQ(g.accessory[1].accessory, kNecklace);
    EXPECT_EQ(g.accessory[0].labels.at(0, 0), kEyewear);
    EXPECT_EQ(g.accessory[0].labels.at(3, 3), kNone);
    EXPECT_THROW(to_portrait_map(adorned), InvalidInput);
}

TEST(Balance, DuplicatesReachTheRatioBand) {
    EXPECT_EQ(duplicates_needed(3, 10, 0.5), 2);
    EXPECT_EQ(duplicates_needed(5, 10, 0.5), 0);
    EXPECT_EQ(duplicates_needed(9, 10, 0.5), 0);
    EXPECT_EQ(duplicates_needed(1, 3, 0.5), 1);

    PacMaskGroups g;
    auto acc = [&](AccessoryClass t, int i) {
        PacMaskRecord r;
        r.id = "s" + std::to_string(i);
        r.group = DataGroup::AccessorySegmaps;
        r.accessory = t;
        r.labels = LabelMap(2, 2);
        g.accessory.push_back(r);
    };
    for (int i = 0; i < 10; ++i) acc(kEarring, i);
    for (int i = 0; i < 2; ++i) acc(kHeadwear, 100 + i);
    Rng rng(3);
    BalanceReport report;
    auto out = balance_and_mirror(g, 0.5, rng, &report);
    EXPECT_EQ(report.duplicates[kHeadwear], 3);
    EXPECT_EQ(report.duplicates[kEarring], 0);
    EXPECT_EQ(out.accessory.size(), 2u * (10 + 2 + 3));
    std::int64_t headwear = 0, mirrored = 0;
    for (const auto& r : out.accessory) {
        headwear += r.accessory == kHeadwear && r.origin != RecordOrigin::Mirrored;
        mirrored += r.origin == RecordOrigin::Mirrored;
    }
    EXPECT_EQ(headwear, 5);
    EXPECT_EQ(mirrored, 15);
}

TEST(Mirror, SwapsSidesAndNegatesYaw) {
    PacMaskRecord r;
    r.id = "x";
    r.group = DataGroup::PortraitSegmaps;
    r.labels = LabelMap(1, 3, kSkin);
    r.labels.at(0, 0) = kEyeLeft;
    r.labels.at(0, 2) = kHair;
    r.pose = {0.3, 0.1};
    auto m = mirror_record(r);
    EXPECT_EQ(m.labels.at(0, 2), kEyeRight);
    EXPECT_EQ(m.labels.at(0, 0), kHair);
    EXPECT_DOUBLE_EQ(m.pose.yaw, -0.3);
    EXPECT_DOUBLE_EQ(m.pose.pitch, 0.1);
    EXPECT_EQ(m.origin, RecordOrigin::Mirrored);
    auto back = mirror_record(m);
    EXPECT_EQ(back.labels, r.labels);
}

TEST(MutualInformation, PerfectDependenceIsLn2) {
    std::vector<std::vector<double>> joint{{37, 0}, {0, 37}};
    EXPECT_NEAR(mutual_information(joint), std::log(2.0), 1e-12);
    EXPECT_NEAR(oracle::mutual_information(joint), std::log(2.0), 1e-12);
    EXPECT_EQ(mutual_information({{5, 5}, {0, 0}}), 0.0);
    EXPECT_NEAR(mutual_information({{10, 10}, {10, 10}}), 0.0, 1e-15);
}

TEST(MutualInformation, MatchesOracleOnRandomTables) {
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
        std::vector<std::vector<double>> joint(2, std::vector<double>(3));
        for (auto& row : joint)
            for (auto& v : row) v = static_cast<double>(rng.uniform_int(50) + 1);
        EXPECT_NEAR(mutual_information(joint), oracle::mutual_information(joint), 1e-12);
    }
    EXPECT_THROW(mutual_information({{1, -1}, {1, 1}}), InvalidInput);
}

TEST(MutualInformation, ReportSkipsMirrorsAndDuplicates) {
    auto config = fixture::small_config();
    auto groups = fixture::synthetic_groups(config, 120, 5);
    auto report = mutual_information_report(groups.rgb);
    EXPECT_EQ(report.samples, 120);
    EXPECT_EQ(report.accessories.size(), 4u);
    ASSERT_FALSE(report.attributes.empty());
    double max_mi = 0.0;
    for (const auto& row : report.mi)
        for (double v : row) {
            EXPECT_GE(v, 0.0);
            max_mi = std::max(max_mi, v);
        }
    // the generator correlates accessory types with gender attributes
    EXPECT_GT(max_mi, 0.01);
}

TEST(Dataset, InvariantsOfASyntheticBuild) {
    auto config = fixture::small_config();
    auto g = fixture::synthetic_groups(config, 150, 6);
    std::set<std::string> ids, portrait_sources, accessory_sources;
    for (const auto* group : {&g.accessory, &g.portrait, &g.rgb})
        for (const auto& r : *group) EXPECT_TRUE(ids.insert(r.id).second) << r.id;
    for (const auto& r : g.portrait) {
        portrait_sources.insert(r.source_id);
        EXPECT_TRUE(r.source_accessories.empty());
        for (auto v : r.labels.labels) ASSERT_LT(v, kPortraitClasses) << r.id;
        EXPECT_EQ(r.labels.height, config.render.resolution);
    }
    for (const auto& r : g.accessory) {
        accessory_sources.insert(r.source_id);
        for (auto v : r.labels.labels) ASSERT_TRUE(v == kNone || v == r.accessory) << r.id;
    }
    for (const auto& s : portrait_sources) EXPECT_EQ(accessory_sources.count(s), 0u) << s;
    EXPECT_EQ(g.rgb.size(), 300u);
    for (const auto& r : g.rgb) EXPECT_EQ(r.rgb.height, config.output_resolution());
}

TEST(Dataset, SeededRebuildIsByteIdentical) {
    auto config = fixture::small_config();
    fixture::TempDir a("pm-a"), b("pm-b"), c("pm-c");
    write_pacmask(a.path(), fixture::synthetic_groups(config, 40, 7));
    write_pacmask(b.path(), fixture::synthetic_groups(config, 40, 7));
    write_pacmask(c.path(), fixture::synthetic_groups(config, 40, 8));
    EXPECT_EQ(fixture::directory_digest(a.path()), fixture::directory_digest(b.path()));
    EXPECT_NE(fixture::directory_digest(a.path()), fixture::directory_digest(c.path()));
}

TEST(Dataset, WriteLoadRoundTrip) {
    auto config = fixture::small_config();
    auto g = fixture::synthetic_groups(config, 30, 9);
    fixture::TempDir dir("pm-rt");
    write_pacmask(dir.path(), g);
    auto back = load_pacmask(dir.path());
    ASSERT_EQ(back.total(), g.total());
    for (auto group : {DataGroup::AccessorySegmaps, DataGroup::PortraitSegmaps, DataGroup::RgbImages}) {
        const auto& x = g.group(group);
        const auto& y = back.group(group);
        ASSERT_EQ(x.size(), y.size());
        for (size_t i = 0; i < x.size(); ++i) {
            EXPECT_EQ(x[i].id, y[i].id);
            EXPECT_EQ(x[i].source_id, y[i].source_id);
            EXPECT_EQ(x[i].origin, y[i].origin);
            EXPECT_EQ(x[i].labels, y[i].labels);
            EXPECT_EQ(x[i].rgb, y[i].rgb);
            EXPECT_EQ(x[i].pose, y[i].pose);
            EXPECT_EQ(x[i].attributes, y[i].attributes);
            EXPECT_EQ(x[i].accessory, y[i].accessory);
            EXPECT_EQ(x[i].source_accessories, y[i].source_accessories);
        }
    }
}

TEST(Dataset, MalformedIndexIsReported) {
    auto config = fixture::small_config();
    fixture::TempDir dir("pm-bad");
    write_pacmask(dir.path(), fixture::synthetic_groups(config, 5, 1));
    {
        std::ofstream out(dir / "index.jsonl", std::ios::app);
        out << "{\"id\": \"broken\"\n";
    }
    EXPECT_THROW(load_pacmask(dir.path()), CorruptionError);
    EXPECT_THROW(load_pacmask(dir / "nowhere"), Error);
}

TEST(RawSamples, DirectoryRoundTripAndRebuild) {
    SyntheticOptions opts;
    opts.seed = 12;
    opts.resolution = 32;
    auto raw = make_synthetic_raw(opts, 6);
    fixture::TempDir dir("raw");
    write_raw_samples(dir.path(), raw);
    auto back = load_raw_samples(dir.path());
    ASSERT_EQ(back.size(), raw.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        EXPECT_EQ(back[i].id, raw[i].id);
        EXPECT_EQ(back[i].masks.bits, raw[i].masks.bits);
        EXPECT_EQ(back[i].rgb, raw[i].rgb);
        EXPECT_EQ(back[i].attributes, raw[i].attributes);
    }
}

TEST(Synthetic, SamplesAreIndexAddressable) {
    SyntheticOptions opts;
    opts.seed = 3;
    opts.resolution = 32;
    auto all = make_synthetic_raw(opts, 5);
    auto fourth = synthetic_sample(opts, 3);
    EXPECT_EQ(fourth.id, all[3].id);
    EXPECT_EQ(fourth.masks.bits, all[3].masks.bits);
    EXPECT_NO_THROW(fourth.validate());
}

TEST(Synthetic, AccessoryIncidenceNearConfigured) {
    SyntheticOptions opts;
    opts.seed = 4;
    Rng rng(4);
    int with = 0;
    for (int i = 0; i < 4000; ++i) with += !draw_synthetic_spec(rng, opts).accessories.empty();
    EXPECT_NEAR(with / 4000.0, opts.accessory_incidence, 0.03);
}
