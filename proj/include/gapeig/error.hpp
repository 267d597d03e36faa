#pragma once

#include <stdexcept>
#include <string>

namespace gapeig {

/// Base of every error raised by the library. `name()` is the stable
/// identifier written into CLI summaries.
class Error : public std::runtime_error {
 public:
    Error(std::string name, const std::string& what)
        : std::runtime_error(name + ": " + what), name_(std::move(name)) {}

    const std::string& name() const noexcept { return name_; }

 private:
    std::string name_;
};

#define GAPEIG_DEFINE_ERROR(Type)                                            \
    class Type : public Error {                                              \
     public:                                                                 \
        explicit Type(const std::string& what) : Error(#Type, what) {}       \
    }

GAPEIG_DEFINE_ERROR(InvalidArgument);
GAPEIG_DEFINE_ERROR(ResolutionError);
GAPEIG_DEFINE_ERROR(InvalidMatrix);
GAPEIG_DEFINE_ERROR(PencilNotDefinite);
GAPEIG_DEFINE_ERROR(NoGap);
GAPEIG_DEFINE_ERROR(MeshOffsetError);
GAPEIG_DEFINE_ERROR(RangeError);
GAPEIG_DEFINE_ERROR(QGridAsymmetric);
GAPEIG_DEFINE_ERROR(WindowTooSmall);
GAPEIG_DEFINE_ERROR(WindowMismatch);
GAPEIG_DEFINE_ERROR(AugmentationDegenerate);
GAPEIG_DEFINE_ERROR(BasisTooLarge);
GAPEIG_DEFINE_ERROR(ConfigError);

#undef GAPEIG_DEFINE_ERROR

}  // namespace gapeig
