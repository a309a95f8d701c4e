#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace consilium {

/// Inference mode selected by the clinician. Drives the egress policy and the
/// attribution label shown under every response.
enum class Mode { PrivateAi, CloudAi, Byok };

std::string_view to_string(Mode mode);
std::optional<Mode> parse_mode(std::string_view text);

/// Label rendered verbatim beneath each AI response.
std::string_view attribution_label(Mode mode);

}  // namespace consilium
