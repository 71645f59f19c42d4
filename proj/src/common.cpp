#include "ecgmatch/common.hpp"

#include <atomic>
#include <iostream>

namespace ecgmatch {

namespace {

void default_warning(const std::string& message) { std::cerr << "warning: " << message << '\n'; }

std::atomic<WarningHandler> g_handler{&default_warning};

}  // namespace

void set_warning_handler(WarningHandler handler) {
  g_handler.store(handler ? handler : &default_warning);
}

void warn(const std::string& message) { g_handler.load()(message); }

}  // namespace ecgmatch
