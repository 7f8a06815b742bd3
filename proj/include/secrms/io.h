#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "secrms/core.h"
#include "secrms/mcmc.h"
#include "secrms/simulate.h"

namespace secrms {

/// Shortest decimal text that parses back to the same double ("nan", "inf", "-inf" allowed).
std::string format_double(double v);
double parse_double(std::string_view s);
std::uint64_t fnv1a(std::string_view bytes);

// Dataset text format (indices 0-based):
//   # secrms-dataset v1
//   M <M>
//   J <J>
//   K <K>
//   n_full <n>
//   statespace <x_min> <x_max> <y_min> <y_max> <grid_resolution>
//   trap <x> <y>                 (J lines, in trap order)
//   capture <i> <j> <k> <det>    (one per nonzero cell, det in {1,2})
//   sex <det> <row> <u>          (recorded labels)
void write_dataset(const CaptureDataset& data, std::ostream& os);
CaptureDataset read_dataset(std::istream& is);
void save_dataset(const CaptureDataset& data, const std::filesystem::path& path);
CaptureDataset load_dataset(const std::filesystem::path& path);
/// Hash of the serialised dataset; chains record it to detect mismatched inputs.
std::uint64_t dataset_hash(const CaptureDataset& data);

// Truth text format:
//   # secrms-truth v1
//   N <N>
//   N_male <n>
//   M <M>
//   ind <i> <z> <u> <x> <y>      (M lines)
//   link <r> <L[r]>              (M lines)
void write_truth(const TruthRecord& truth, std::ostream& os);
TruthRecord read_truth(std::istream& is);
void save_truth(const TruthRecord& truth, const std::filesystem::path& path);
TruthRecord load_truth(const std::filesystem::path& path);

/// "# schema: secrms.<name>/<major>.<minor>"
std::string schema_line(std::string_view name, int major, int minor);
/// Throws DataError unless the line names `name` with the given major version.
void check_schema(std::string_view line, std::string_view name, int major);

nlohmann::json to_json(const McmcConfig& c);
McmcConfig mcmc_config_from_json(const nlohmann::json& j);
/// Model, prior, configuration and acceptance rates; the draws live in the CSV.
nlohmann::json chain_metadata(const Chain& chain);

/// One row per draw: draw, log_lik, log_prior, log_latent_prior, the eight scalars (NA when
/// inactive), then z and u as 0/1 strings, L joined by '-', and S as "x:y;" pairs.
void write_chain_csv(const Chain& chain, std::ostream& os);
/// Per-individual log-likelihoods are recomputed from the dataset.
Chain read_chain_csv(std::istream& is, const nlohmann::json& metadata, const CaptureDataset& data);

void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

} // namespace secrms
