#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace pomo3d {

enum class ClassSet : std::uint8_t { Portrait, Accessory };

constexpr int kPortraitClasses = 20;
constexpr int kAccessoryClasses = 5;

/// Unadorned portrait semantics (nose already split into halves).
enum PortraitClass : std::uint8_t {
    kBackground = 0,
    kSkin,
    kNoseLeft,
    kNoseRight,
    kEyeLeft,
    kEyeRight,
    kBrowLeft,
    kBrowRight,
    kEarLeft,
    kEarRight,
    kMouth,
    kLipUpper,
    kLipLower,
    kHair,
    kNeck,
    kCloth,
    kTeeth,
    kPupilLeft,
    kPupilRight,
    kBeard,
};

enum AccessoryClass : std::uint8_t { kNone = 0, kEyewear, kEarring, kHeadwear, kNecklace };

/// Annotation classes of raw samples: portrait classes with a single nose plus the
/// four accessory types.
enum RawClass : std::uint8_t {
    kRawBackground = 0,
    kRawSkin,
    kRawNose,
    kRawEyeLeft,
    kRawEyeRight,
    kRawBrowLeft,
    kRawBrowRight,
    kRawEarLeft,
    kRawEarRight,
    kRawMouth,
    kRawLipUpper,
    kRawLipLower,
    kRawHair,
    kRawNeck,
    kRawCloth,
    kRawTeeth,
    kRawPupilLeft,
    kRawPupilRight,
    kRawBeard,
    kRawEyewear,
    kRawEarring,
    kRawHeadwear,
    kRawNecklace,
};
constexpr int kRawClasses = 23;

/// Label space after nose splitting: portrait ids 0..19, accessory types at
/// kParsedAccessoryBase + (AccessoryClass - 1).
constexpr int kParsedAccessoryBase = kPortraitClasses;
constexpr int kParsedClasses = kPortraitClasses + kAccessoryClasses - 1;

constexpr int class_count(ClassSet set) { return set == ClassSet::Portrait ? kPortraitClasses : kAccessoryClasses; }

std::string_view portrait_class_name(int id);
std::string_view accessory_class_name(int id);
std::string_view raw_class_name(int id);
std::string_view class_set_name(ClassSet set);

/// Accessory type of a raw class, if it is one.
std::optional<AccessoryClass> raw_accessory(int raw);
constexpr bool is_raw_accessory(int raw) { return raw >= kRawEyewear && raw <= kRawNecklace; }
constexpr bool is_parsed_accessory(int parsed) { return parsed >= kParsedAccessoryBase; }

/// Raw id -> parsed id for every class except the nose.
int raw_to_parsed(int raw);

/// Overlap priority of raw classes, highest first. Accessories outrank everything.
const std::array<std::uint8_t, kRawClasses>& raw_priority_order();

/// Left/right swap applied when an image is mirrored.
int mirror_portrait_class(int id);
int mirror_parsed_class(int id);

}  // namespace pomo3d
