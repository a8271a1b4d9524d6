#pragma once

#include <string>
#include <vector>

namespace herdkit {

// Shortest round-trip decimal rendering of a double (via std::to_chars), so
// CSV output is byte-stable between runs and parses back to the same value.
std::string format_real(double value);

// One scalar observation. peer_id is a small integer rendered in decimal, or
// the literal string "ensemble" for metrics of a combined embedding.
struct MetricsRow {
  long global_step = 0;
  std::string peer_id;
  std::string metric_name;
  double value = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

// Append-only metrics log shared by training, probes and analysis. Steps must
// be non-decreasing: rows arrive in the order the run produced them.
class MetricsLog {
 public:
  void append(long global_step, std::string peer_id, std::string metric_name, double value);
  const std::vector<MetricsRow>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }

  // Writes "step,peer_id,metric_name,value" with a header line.
  void write_csv(const std::string& path) const;
  void write_csv(std::ostream& out) const;

 private:
  std::vector<MetricsRow> rows_;
};

}  // namespace herdkit
