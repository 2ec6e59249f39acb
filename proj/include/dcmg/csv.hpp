#pragma once

// Trajectory CSV files: one row per recorded sample, unit-suffixed column
// names, values at 17 significant digits so a re-read is bit-exact.

#include "dcmg/sim_engine.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace dcmg {

/// Column names; a function of the network dimensions only.
std::vector<std::string> csv_columns(int n_gens, int n_lines, int n_buses);

/// Writes the samples to `csv_path` and the event log to `events_path`.
/// Throws std::runtime_error carrying the OS message on I/O failure.
void emit_csv(const Trajectory& traj, const std::filesystem::path& csv_path,
              const std::filesystem::path& events_path);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

CsvTable read_csv(const std::filesystem::path& path);

/// Rebuilds samples from a table written by emit_csv.
std::vector<Sample> samples_from_csv(const CsvTable& table, int n_gens, int n_lines, int n_buses);

}  // namespace dcmg
