#pragma once

#include <functional>
#include <string_view>

namespace mfadv {

// Warnings go to stderr unless a handler is installed (the tests capture them).
using WarningHandler = std::function<void(std::string_view)>;

void set_warning_handler(WarningHandler h);
void warn(std::string_view msg);

} // namespace mfadv
