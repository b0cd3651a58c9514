#pragma once

#include <stdexcept>
#include <string>

namespace viewco {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define VIEWCO_DEFINE_ERROR(NAME)                                        \
    struct NAME : Error {                                                \
        explicit NAME(const std::string& msg) : Error(#NAME ": " + msg) {} \
    }

VIEWCO_DEFINE_ERROR(ShapeError);
VIEWCO_DEFINE_ERROR(DegenerateVector);
VIEWCO_DEFINE_ERROR(InvalidTemperature);
VIEWCO_DEFINE_ERROR(NonFiniteObjective);
VIEWCO_DEFINE_ERROR(ConfigError);
VIEWCO_DEFINE_ERROR(EmptyText);
VIEWCO_DEFINE_ERROR(AmbiguousCaption);
VIEWCO_DEFINE_ERROR(NormalizationError);
VIEWCO_DEFINE_ERROR(CheckpointMismatch);
VIEWCO_DEFINE_ERROR(DatasetNotFound);
VIEWCO_DEFINE_ERROR(AugmentationError);
VIEWCO_DEFINE_ERROR(EmptyOverlap);
VIEWCO_DEFINE_ERROR(FormatError);

#undef VIEWCO_DEFINE_ERROR

} // namespace viewco
