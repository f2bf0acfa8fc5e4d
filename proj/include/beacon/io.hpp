#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "beacon/field.hpp"
#include "beacon/twin.hpp"

namespace beacon {

// External contract of the repository: the flat key=value config format,
// the "BEAC" grid and "BCKP" checkpoint binary formats (little-endian,
// fixed-width), and the metrics.csv / design.json report files.

struct RunConfig {
  TwinConfig twin;
  std::string out_dir = "out";
  std::string label;
};

RunConfig default_run_config();

/// Parse a flat key=value file. Missing keys take the documented defaults;
/// unknown keys and malformed values are errors naming the key.
RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text);

/// Shortest round-trip decimal form of a double (std::to_chars).
std::string format_double(double v);

// Grid persistence: magic "BEAC", u32 version=1, u32 rows, u32 cols, then
// rows*cols little-endian f64 row-major.
void save_grid(const Field2D& field, const std::string& path);
Field2D load_grid(const std::string& path);

/// Everything needed to continue a twin run bit-exactly: flow parameters in
/// flattening order, design logits and drilled list, both Adam states, the
/// prior ensemble, ground truth, metrics history, and step k.
struct LoadedCheckpoint {
  TwinConfig cfg;
  TwinState state;
  bool random_placement = false;
};

void save_checkpoint(const TwinState& state, const TwinConfig& cfg, bool random_placement,
                     const std::string& path);
LoadedCheckpoint load_checkpoint(const std::string& path);

/// Write metrics.csv (one row per iteration per report) with header
/// iteration,method,seed,rmse,mean_posterior_std,drilled_column,final_loss.
void write_metrics_csv(const std::vector<const Report*>& reports, const std::string& path);

/// metrics.csv + design.json + config echo for one run.
void emit_report(const Report& report, const TwinConfig& cfg, const std::string& label,
                 const std::string& dir);

}  // namespace beacon
