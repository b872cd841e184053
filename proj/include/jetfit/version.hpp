#ifndef JETFIT_VERSION_HPP
#define JETFIT_VERSION_HPP

namespace jetfit {

inline constexpr const char* kVersion = "jetfit 1.0.0";

}  // namespace jetfit

#endif  // JETFIT_VERSION_HPP
