#include "mfadv/log.hpp"

#include <iostream>
#include <mutex>
#include <string>

namespace mfadv {

namespace {
std::mutex g_mutex;
WarningHandler g_handler;
}

void set_warning_handler(WarningHandler h)
{
	std::lock_guard lock(g_mutex);
	g_handler = std::move(h);
}

void warn(std::string_view msg)
{
	std::lock_guard lock(g_mutex);
	if (g_handler)
		g_handler(msg);
	else
		std::cerr << "warning: " << msg << '\n';
}

} // namespace mfadv
