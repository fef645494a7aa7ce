#pragma once

#include <stdexcept>
#include <string>

namespace dope {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define DOPE_ERROR_TYPE(NAME)                                                  \
    struct NAME : Error {                                                      \
        using Error::Error;                                                    \
    }

// geometry
DOPE_ERROR_TYPE(BackgroundPixel);
DOPE_ERROR_TYPE(InvalidDepth);
DOPE_ERROR_TYPE(EmptyForeground);
DOPE_ERROR_TYPE(EmptyInput);
DOPE_ERROR_TYPE(OutOfBounds);
DOPE_ERROR_TYPE(NonIntegerStride);

// scenegen
DOPE_ERROR_TYPE(UnknownTemplate);
DOPE_ERROR_TYPE(InvalidRange);
DOPE_ERROR_TYPE(IoError);

// autodiff / model
DOPE_ERROR_TYPE(ShapeMismatch);
DOPE_ERROR_TYPE(NonScalarOutput);
DOPE_ERROR_TYPE(StepOutOfRange);
DOPE_ERROR_TYPE(NameMismatch);

// contrastive
DOPE_ERROR_TYPE(InsufficientData);
DOPE_ERROR_TYPE(PairExhausted);
DOPE_ERROR_TYPE(NoCorrespondences);
DOPE_ERROR_TYPE(NoNegatives);

// lowshot
DOPE_ERROR_TYPE(InsufficientClasses);
DOPE_ERROR_TYPE(InsufficientViews);
DOPE_ERROR_TYPE(EmptyQueryForeground);

// harness
DOPE_ERROR_TYPE(CorruptCheckpoint);
DOPE_ERROR_TYPE(VersionMismatch);
DOPE_ERROR_TYPE(ConfigError);

#undef DOPE_ERROR_TYPE

} // namespace dope
