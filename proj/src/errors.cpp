#include "cteg/errors.hpp"

#include <iostream>

namespace cteg {

void warn(const std::string& message) { std::cerr << "warning: " << message << '\n'; }

}  // namespace cteg
