#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "graphdive/graph.hpp"
#include "graphdive/metrics.hpp"
#include "graphdive/training.hpp"

namespace graphdive {

inline constexpr int kDatasetFormatVersion = 1;
inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr int kReportFormatVersion = 1;

// Malformed input files. `line` is 1-based, 0 when not line-oriented.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// ---------------------------------------------------------------------------
// Files

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temporary and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// "key = value" lines; '#' starts a comment; blank lines ignored.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

// ---------------------------------------------------------------------------
// Datasets: JSON lines. First line is the header
//   {"format_version":1,"T":T,"f_v":fv,"f_e":fe}
// then one graph per line
//   {"num_nodes":n,"edges":[[u,v],...],"node_feats":[[...],...],
//    "edge_feats":[[...],...],"labels":[1,0,null,...],"split":"train"}
// A null label is missing; "split" defaults to "train".

void write_dataset(std::ostream& out, const Dataset& ds);
Dataset read_dataset(std::istream& in);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// "index split" per line, every graph exactly once.
std::vector<Split> read_split_file(const std::filesystem::path& path, std::size_t num_graphs);

// ---------------------------------------------------------------------------
// Synthetic imbalanced benchmark. Positives are trees plus one edge closing a
// triangle; negatives are trees. A `diversity` fraction of positive test
// graphs closes a 4-cycle instead.

struct SynthSpec {
  std::size_t n = 1000;
  double positive_ratio = 0.05;
  std::size_t min_nodes = 4;
  std::size_t max_nodes = 8;
  double noise = 0.1;
  double diversity = 0.0;
  std::uint64_t seed = 0;
  std::size_t node_feat_dim = 4;
  std::size_t edge_feat_dim = 2;
  double train_ratio = 0.8;
  double valid_ratio = 0.1;
  double test_ratio = 0.1;

  void validate() const;
  friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

SynthSpec parse_synth_spec(std::string_view text);
std::string synth_spec_to_text(const SynthSpec& spec);
Dataset synth_generate(const SynthSpec& spec);

bool has_triangle(const Graph& g);
bool has_cycle(const Graph& g);

// ---------------------------------------------------------------------------
// Training config: flat key = value text mirroring TrainConfig.

// With `check` the result is validated.
TrainConfig parse_config(std::string_view text, TrainConfig base = {}, bool check = true);
std::string config_to_text(const TrainConfig& cfg);
// "a..b" or "a,b,c".
std::vector<std::size_t> parse_size_list(std::string_view s);
std::vector<double> parse_double_list(std::string_view s);

// ---------------------------------------------------------------------------
// Checkpoints: "GDIVECKP", u32 version, u64 payload size, payload, u32 CRC-32
// of the payload. All integers and doubles little-endian; doubles stored as
// raw IEEE-754 bits so every matrix round-trips exactly.

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Tab-separated reports, each starting with a "# format_version=1" line.

std::string format_eval_report(const EvalReport& rep);
std::string format_sweep_table(const SweepResult& res);
std::string format_expert_usage(const std::vector<ExpertUsage>& usage);

}  // namespace graphdive
