#pragma once

#include <stdexcept>
#include <string>

namespace liepush {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input has the wrong shape, a non-finite entry, or violates a precondition.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Group element fails the group invariants (orthogonality, det, bottom row).
class InvalidElement : public Error {
public:
    using Error::Error;
};

/// Two operands belong to different groups.
class GroupMismatch : public Error {
public:
    using Error::Error;
};

/// Matrix is singular to working precision.
class SingularMatrix : public Error {
public:
    using Error::Error;
};

/// Principal log is ambiguous (rotation angle at or near pi).
class BoundaryError : public Error {
public:
    using Error::Error;
};

/// Element lies on the singular set of exp: preimage is not discrete or the
/// number of branches changes there.
class SingularElement : public Error {
public:
    using Error::Error;
};

/// Algebra point lies on a shell where the volume factor diverges.
class SingularShell : public Error {
public:
    using Error::Error;
};

/// Point is outside the image of the radial squash.
class OutOfSupport : public Error {
public:
    using Error::Error;
};

/// A non-finite value appeared during differentiation or training.
class NonFinite : public Error {
public:
    using Error::Error;
};

/// Training loss became non-finite.
class Divergence : public Error {
public:
    using Error::Error;
};

} // namespace liepush
