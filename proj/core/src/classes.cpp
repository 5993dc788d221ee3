#include "pomo3d/classes.hpp"

#include "pomo3d/errors.hpp"

namespace pomo3d {
namespace {

constexpr std::array<std::string_view, kPortraitClasses> kPortraitNames{
    "background", "skin",  "nose_left", "nose_right", "eye_left", "eye_right",  "brow_left",
    "brow_right", "ear_left", "ear_right", "mouth",   "lip_upper", "lip_lower", "hair",
    "neck",       "cloth", "teeth",    "pupil_left", "pupil_right", "beard"};

constexpr std::array<std::string_view, kAccessoryClasses> kAccessoryNames{"none", "eyewear", "earring", "headwear",
                                                                          "necklace"};

constexpr std::array<std::string_view, kRawClasses> kRawNames{
    "background", "skin",      "nose",      "eye_left", "eye_right",  "brow_left",   "brow_right", "ear_left",
    "ear_right",  "mouth",     "lip_upper", "lip_lower", "hair",      "neck",        "cloth",      "teeth",
    "pupil_left", "pupil_right", "beard",   "eyewear",  "earring",    "headwear",    "necklace"};

}  // namespace

std::string_view portrait_class_name(int id) { return kPortraitNames.at(id); }
std::string_view accessory_class_name(int id) { return kAccessoryNames.at(id); }
std::string_view raw_class_name(int id) { return kRawNames.at(id); }
std::string_view class_set_name(ClassSet set) { return set == ClassSet::Portrait ? "portrait_20" : "accessory_5"; }

std::optional<AccessoryClass> raw_accessory(int raw) {
    if (!is_raw_accessory(raw)) return std::nullopt;
    return static_cast<AccessoryClass>(raw - kRawEyewear + 1);
}

int raw_to_parsed(int raw) {
    if (raw < 0 || raw >= kRawClasses) throw InvalidInput("raw class id out of range");
    if (raw == kRawNose) throw InvalidInput("the nose class has no parsed id before splitting");
    if (raw < kRawNose) return raw;
    if (raw < kRawEyewear) return raw + 1;
    return kParsedAccessoryBase + (raw - kRawEyewear);
}

const std::array<std::uint8_t, kRawClasses>& raw_priority_order() {
    // Small, thin structures before the large regions they sit on.
    static const std::array<std::uint8_t, kRawClasses> order{
        kRawEyewear,   kRawHeadwear,  kRawEarring,    kRawNecklace, kRawPupilLeft, kRawPupilRight,
        kRawEyeLeft,   kRawEyeRight,  kRawBrowLeft,   kRawBrowRight, kRawTeeth,    kRawLipUpper,
        kRawLipLower,  kRawMouth,     kRawNose,       kRawBeard,    kRawEarLeft,   kRawEarRight,
        kRawHair,      kRawSkin,      kRawNeck,       kRawCloth,    kRawBackground};
    return order;
}

int mirror_portrait_class(int id) {
    switch (id) {
        case kNoseLeft: return kNoseRight;
        case kNoseRight: return kNoseLeft;
        case kEyeLeft: return kEyeRight;
        case kEyeRight: return kEyeLeft;
        case kBrowLeft: return kBrowRight;
        case kBrowRight: return kBrowLeft;
        case kEarLeft: return kEarRight;
        case kEarRight: return kEarLeft;
        case kPupilLeft: return kPupilRight;
        case kPupilRight: return kPupilLeft;
        default: return id;
    }
}

int mirror_parsed_class(int id) { return id < kPortraitClasses ? mirror_portrait_class(id) : id; }

}  // namespace pomo3d
