#pragma once

#include <filesystem>
#include <string>

#include "extraction_lab/nn.hpp"

namespace extraction_lab {

// Checkpoint document, version "v1":
//   {"version":"v1",
//    "spec":{"input_dim":d,"hidden_sizes":[...],"num_classes":C,"activation":"relu"},
//    "weights":[[row-major fan_out*fan_in values], ...],
//    "biases":[[fan_out values], ...]}
std::string checkpoint_to_string(const Network& net);
Network checkpoint_from_string(const std::string& text);

void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace extraction_lab
