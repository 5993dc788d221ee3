#include "pomo3d/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "pomo3d/config.hpp"
#include "pomo3d/rng.hpp"

namespace pomo3d {
namespace {

using Color = std::array<int, 3>;

constexpr std::array<Color, 5> kSkinTones{{{241, 194, 167}, {224, 172, 138}, {198, 134, 94}, {141, 85, 54}, {95, 60, 40}}};
constexpr std::array<Color, 5> kHairColors{{{30, 24, 20}, {90, 56, 32}, {170, 120, 60}, {220, 190, 120}, {140, 140, 140}}};
constexpr std::array<Color, 5> kClothColors{{{40, 60, 140}, {150, 30, 40}, {50, 110, 60}, {220, 220, 220}, {40, 40, 40}}};
constexpr std::array<Color, 4> kAccessoryColors{{{20, 20, 20}, {200, 170, 40}, {190, 190, 200}, {160, 40, 120}}};

double inside_ellipse(double u, double v, double cx, double cy, double rx, double ry) {
    const double du = (u - cx) / rx, dv = (v - cy) / ry;
    return du * du + dv * dv;
}

Color shade(Color c, double v) {
    const double k = 1.05 - 0.15 * v;
    for (auto& x : c) x = std::clamp(static_cast<int>(std::lround(x * k)), 0, 255);
    return c;
}

}  // namespace

SyntheticSpec draw_synthetic_spec(Rng& rng, const SyntheticOptions& options) {
    SyntheticSpec s;
    s.pose.yaw = (rng.uniform() * 2.0 - 1.0) * 0.5;
    s.pose.pitch = (rng.uniform() * 2.0 - 1.0) * 0.25;
    const bool female = rng.bernoulli(0.5);
    s.attributes["female"] = female;
    s.attributes["young"] = rng.bernoulli(0.6);
    s.attributes["smiling"] = rng.bernoulli(0.5);
    s.attributes["wearing_lipstick"] = rng.bernoulli(female ? 0.7 : 0.05);
    s.attributes["heavy_makeup"] = rng.bernoulli(female ? 0.5 : 0.02);
    s.beard = !female && rng.bernoulli(0.3);
    s.long_hair = rng.bernoulli(female ? 0.8 : 0.15);
    s.skin_tone = static_cast<int>(rng.uniform_int(kSkinTones.size()));
    s.hair_color = static_cast<int>(rng.uniform_int(kHairColors.size()));
    s.cloth_color = static_cast<int>(rng.uniform_int(kClothColors.size()));
    s.accessory_color = static_cast<int>(rng.uniform_int(kAccessoryColors.size()));
    s.face_scale = 0.92 + 0.16 * rng.uniform();

    if (rng.bernoulli(options.accessory_incidence)) {
        // eyewear, earring, headwear, necklace
        const std::array<double, 4> weights = female ? std::array<double, 4>{0.2, 0.4, 0.15, 0.25}
                                                     : std::array<double, 4>{0.5, 0.03, 0.4, 0.07};
        auto pick = [&](std::optional<AccessoryClass> exclude) {
            double total = 0.0;
            for (int k = 0; k < 4; ++k) total += (exclude && *exclude == k + 1) ? 0.0 : weights[k];
            double x = rng.uniform() * total;
            for (int k = 0; k < 4; ++k) {
                if (exclude && *exclude == k + 1) continue;
                if (x < weights[k]) return static_cast<AccessoryClass>(k + 1);
                x -= weights[k];
            }
            return exclude && *exclude == kNecklace ? kHeadwear : kNecklace;
        };
        const auto first = pick(std::nullopt);
        s.accessories.push_back(first);
        if (rng.bernoulli(options.multi_accessory_prob)) s.accessories.push_back(pick(first));
        std::sort(s.accessories.begin(), s.accessories.end());
    }
    return s;
}

RawAnnotatedSample rasterize_synthetic(const SyntheticSpec& spec, const std::string& id, int resolution) {
    RawAnnotatedSample out;
    out.id = id;
    out.attributes = spec.attributes;
    out.pose = spec.pose;
    out.masks = MaskStack(resolution, resolution);
    out.rgb = RgbImage(resolution, resolution);

    const double sy = std::sin(spec.pose.yaw), sp = std::sin(spec.pose.pitch);
    const double cx = 0.18 * sy, cy = -0.05 + 0.25 * sp;
    const double rx = 0.40 * spec.face_scale * (1.0 - 0.12 * std::abs(sy)), ry = 0.52 * spec.face_scale;
    const double fx = cx + 0.12 * sy;  // facial features sit in front of the face plane
    const double nx = cx + 0.22 * sy;  // nose tip protrudes furthest
    const double ey = cy - 0.06;
    const bool smiling = spec.attributes.count("smiling") && spec.attributes.at("smiling");
    auto has = [&](AccessoryClass a) {
        return std::find(spec.accessories.begin(), spec.accessories.end(), a) != spec.accessories.end();
    };

    for (int r = 0; r < resolution; ++r) {
        const double v = (r + 0.5) / resolution * 2.0 - 1.0;
        for (int c = 0; c < resolution; ++c) {
            const double u = (c + 0.5) / resolution * 2.0 - 1.0;
            auto set = [&](int cls, bool on) {
                if (on) out.masks.at(cls, r, c) = 1;
            };
            const bool face = inside_ellipse(u, v, cx, cy, rx, ry) <= 1.0;
            set(kRawSkin, face);
            set(kRawCloth, inside_ellipse(u, v, cx * 0.5, 1.45, 1.0, 0.62) <= 1.0);
            set(kRawNeck, std::abs(u - cx * 0.7) < 0.19 && v > cy + 0.3 && v < 0.98);
            const bool hair_top = inside_ellipse(u, v, cx, cy - 0.1, rx * 1.16, ry * 0.98) <= 1.0 && v < cy - 0.18;
            const bool hair_long = spec.long_hair && inside_ellipse(u, v, cx, cy + 0.1, rx * 1.25, ry * 1.05) <= 1.0 &&
                                   std::abs(u - cx) > rx * 0.82 && v < cy + 0.6;
            set(kRawHair, hair_top || hair_long);
            for (int side = 0; side < 2; ++side) {
                const double sgn = side == 0 ? -1.0 : 1.0;
                const double ex = fx + sgn * 0.16;
                set(side == 0 ? kRawEyeLeft : kRawEyeRight, inside_ellipse(u, v, ex, ey, 0.08, 0.038) <= 1.0);
                set(side == 0 ? kRawPupilLeft : kRawPupilRight, inside_ellipse(u, v, ex + 0.02 * sy, ey, 0.028, 0.028) <= 1.0);
                set(side == 0 ? kRawBrowLeft : kRawBrowRight, inside_ellipse(u, v, ex, ey - 0.1, 0.09, 0.022) <= 1.0);
                const double ear_x = cx + sgn * (rx + 0.03) - 0.06 * sy;
                set(side == 0 ? kRawEarLeft : kRawEarRight, inside_ellipse(u, v, ear_x, cy + 0.02, 0.065, 0.12) <= 1.0);
                if (has(kEarring)) set(kRawEarring, inside_ellipse(u, v, ear_x, cy + 0.19, 0.035, 0.045) <= 1.0);
                if (has(kEyewear)) {
                    const bool lens = std::abs(u - ex) < 0.125 && std::abs(v - ey) < 0.075;
                    const bool arm = std::abs(v - (ey - 0.05)) < 0.014 && sgn * (u - ex) > 0.0 &&
                                     sgn * (u - ex) < 0.125 + 0.2 && face;
                    set(kRawEyewear, lens || arm);
                }
            }
            if (has(kEyewear)) set(kRawEyewear, std::abs(u - fx) < 0.05 && std::abs(v - (ey - 0.04)) < 0.015);
            set(kRawNose, inside_ellipse(u, v, nx, cy + 0.1, 0.06, 0.13) <= 1.0);
            const double my = cy + 0.3;
            set(kRawLipUpper, inside_ellipse(u, v, fx, my - 0.025, 0.15, 0.035) <= 1.0);
            set(kRawLipLower, inside_ellipse(u, v, fx, my + 0.03, 0.14, 0.04) <= 1.0);
            set(kRawMouth, inside_ellipse(u, v, fx, my, 0.11, smiling ? 0.035 : 0.016) <= 1.0);
            if (smiling) set(kRawTeeth, inside_ellipse(u, v, fx, my - 0.006, 0.085, 0.016) <= 1.0);
            if (spec.beard) set(kRawBeard, face && v > cy + 0.22 && inside_ellipse(u, v, fx, my, 0.16, 0.06) > 1.0);
            if (has(kHeadwear)) {
                const bool crown = inside_ellipse(u, v, cx, cy - 0.42, rx * 1.2, 0.32) <= 1.0 && v < cy - 0.28;
                const bool brim = std::abs(u - cx - 0.1 * sy) < rx * 1.35 && std::abs(v - (cy - 0.3)) < 0.04;
                set(kRawHeadwear, crown || brim);
            }
            if (has(kNecklace)) {
                const double d = inside_ellipse(u, v, cx * 0.7, cy + 0.55, 0.3, 0.3);
                set(kRawNecklace, d <= 1.0 && d >= 0.72 && v > cy + 0.62);
            }
        }
    }

    const auto labels = reorder_semantics(out.masks);
    const Color background{200, 205, 210};
    for (int r = 0; r < resolution; ++r) {
        const double v = (r + 0.5) / resolution * 2.0 - 1.0;
        for (int c = 0; c < resolution; ++c) {
            Color col = background;
            const Color skin = kSkinTones[spec.skin_tone];
            switch (labels.at(r, c)) {
                case kRawSkin: case kRawNose: case kRawEarLeft: case kRawEarRight: case kRawNeck:
                    col = labels.at(r, c) == kRawNeck ? shade(skin, 0.6) : skin;
                    if (labels.at(r, c) == kRawNose) col = shade(skin, 0.4);
                    break;
                case kRawHair: case kRawBrowLeft: case kRawBrowRight: case kRawBeard:
                    col = kHairColors[spec.hair_color];
                    break;
                case kRawEyeLeft: case kRawEyeRight: col = {240, 240, 240}; break;
                case kRawPupilLeft: case kRawPupilRight: col = {40, 30, 30}; break;
                case kRawMouth: col = {90, 30, 30}; break;
                case kRawTeeth: col = {250, 250, 245}; break;
                case kRawLipUpper: case kRawLipLower: {
                    const bool lipstick = spec.attributes.count("wearing_lipstick") && spec.attributes.at("wearing_lipstick");
                    col = lipstick ? Color{190, 30, 60} : shade(skin, 1.2);
                    break;
                }
                case kRawCloth: col = kClothColors[spec.cloth_color]; break;
                case kRawEyewear: case kRawEarring: case kRawHeadwear: case kRawNecklace:
                    col = kAccessoryColors[spec.accessory_color];
                    break;
                default: break;
            }
            col = shade(col, v);
            auto* px = out.rgb.pixel(r, c);
            for (int k = 0; k < 3; ++k) px[k] = static_cast<std::uint8_t>(col[k]);
        }
    }
    return out;
}

RawAnnotatedSample synthetic_sample(const SyntheticOptions& options, std::int64_t index) {
    Rng rng = Rng::derive(options.seed, static_cast<std::uint64_t>(index));
    const auto spec = draw_synthetic_spec(rng, options);
    char id[32];
    std::snprintf(id, sizeof(id), "syn%06lld", static_cast<long long>(index));
    return rasterize_synthetic(spec, id, options.resolution);
}

std::vector<RawAnnotatedSample> make_synthetic_raw(const SyntheticOptions& options, std::int64_t n) {
    std::vector<RawAnnotatedSample> out;
    out.reserve(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) out.push_back(synthetic_sample(options, i));
    return out;
}

PacMaskGroups make_synthetic_dataset(const SyntheticOptions& options, std::int64_t n, const DatasetConfig& config,
                                     const BuildOptions& build) {
    PacMaskBuilder builder(config, build);
    for (std::int64_t i = 0; i < n; ++i) builder.add(synthetic_sample(options, i), RecordOrigin::Synthetic);
    Rng rng = Rng::derive(options.seed, 0xBA1A2CEull);
    return builder.finish(rng);
}

}  // namespace pomo3d
