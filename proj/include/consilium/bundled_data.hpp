#pragma once

#include <string_view>

namespace consilium::bundled {

// Data files compiled into the binary from data/. Each returns the exact file bytes.
std::string_view knowledge_base();
std::string_view prompt_templates();
std::string_view risk_lexicon();
std::string_view escalation_resources();
std::string_view patient_feedback();
std::string_view demo_manifests();
std::string_view demo_mock_scripts();

}  // namespace consilium::bundled
