// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace spinprobe::io {

/// Plot kinds understood by emit_plot_data.
const std::vector<std::string>& plot_kinds();

/// Writes the CSV series of `kind` from a report into out_dir and returns the paths written.
/// Throws ValidationError for an unknown kind (listing the valid ones) or a report that does
/// not carry the series.
std::vector<std::string> emit_plot_data(const nlohmann::json& report, const std::string& kind,
                                        const std::string& out_dir);

}  // namespace spinprobe::io
