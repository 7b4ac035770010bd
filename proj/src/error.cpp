#include "tsad/error.hpp"

#include <iostream>
#include <mutex>

namespace tsad {

namespace {

std::mutex& handler_mutex()
{
    static std::mutex m;
    return m;
}

WarningHandler& current_handler()
{
    static WarningHandler handler;
    return handler;
}

} // namespace

Error Error::with_stage(std::string stage) const
{
    Error tagged(kind_, "[" + stage + "] " + what());
    tagged.stage_ = std::move(stage);
    return tagged;
}

void warn(std::string_view message)
{
    std::lock_guard lock(handler_mutex());
    if (auto& handler = current_handler()) {
        handler(message);
    } else {
        std::cerr << "warning: " << message << '\n';
    }
}

WarningHandler set_warning_handler(WarningHandler handler)
{
    std::lock_guard lock(handler_mutex());
    auto previous = std::move(current_handler());
    current_handler() = std::move(handler);
    return previous;
}

} // namespace tsad
