#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "vstab/grid.hpp"
#include "vstab/machine.hpp"

namespace vstab {

/// A loaded case: the network plus the dynamic data of its machines.
struct Case {
  std::string name;
  Network network;
  std::vector<MachineModel> machines;
};

/// Parse a case document. Physical quantities (MW, MVAr, machine-base
/// impedances) are normalised to per-unit on the document's base_mva.
/// Throws SchemaError with a JSON-pointer style field path on violations.
Case parse_case(const nlohmann::json& doc, const std::string& name = "");
Case parse_case_text(const std::string& text, const std::string& name = "");

/// Inverse of parse_case: emits physical units again.
nlohmann::json serialize_case(const Case& c);

/// Load either a bundled case by name ("twobus", "threebus", "ieee39",
/// "ieee39_svc") or a case file by path.
Case load_case(const std::string& name_or_path);

std::vector<std::string> bundled_case_names();
/// Raw text of a bundled case; throws InvalidArgument for unknown names.
const std::string& bundled_case_text(const std::string& name);

}  // namespace vstab
