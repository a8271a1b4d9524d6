#include "herdkit/metrics.hpp"

#include <charconv>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace herdkit {

std::string format_real(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) throw std::runtime_error("format_real: to_chars failed");
  return std::string(buf, ptr);
}

void MetricsLog::append(long global_step, std::string peer_id, std::string metric_name,
                        double value) {
  if (!rows_.empty() && global_step < rows_.back().global_step) {
    throw std::invalid_argument("MetricsLog::append: global_step must be non-decreasing (got " +
                                std::to_string(global_step) + " after " +
                                std::to_string(rows_.back().global_step) + ")");
  }
  rows_.push_back({global_step, std::move(peer_id), std::move(metric_name), value});
}

void MetricsLog::write_csv(std::ostream& out) const {
  out << "step,peer_id,metric_name,value\n";
  for (const MetricsRow& row : rows_) {
    out << row.global_step << ',' << row.peer_id << ',' << row.metric_name << ','
        << format_real(row.value) << '\n';
  }
}

void MetricsLog::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("MetricsLog::write_csv: cannot open '" + path + "'");
  write_csv(out);
  if (!out) throw std::runtime_error("MetricsLog::write_csv: write failed for '" + path + "'");
}

}  // namespace herdkit
