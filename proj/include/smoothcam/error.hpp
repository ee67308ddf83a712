#pragma once

#include <stdexcept>
#include <string>

namespace smoothcam {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents or hyperparameters.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid CAM request: unknown layer, class out of range, bad filter or
/// subset coordinate, negative noise level.
class RequestError : public Error {
public:
    using Error::Error;
};

/// Image decode/encode failure.
class ImageError : public Error {
public:
    using Error::Error;
};

}  // namespace smoothcam
