#pragma once

#include <map>
#include <string>
#include <vector>

#include "plugpull/hybrid_automaton.hpp"

namespace plugpull::io {

/// Column names in file order.
const std::vector<std::string>& trace_columns();

/// Metadata comment line, header row, one row per logged sample.
std::string format_trace_csv(const hybrid::HybridTrace& tr, const ScenarioConfig& cfg);
void write_trace_csv(const std::string& path, const hybrid::HybridTrace& tr, const ScenarioConfig& cfg);

/// One row per mode transition: time, edge, pre/post state, jump.
std::string format_events_csv(const hybrid::HybridTrace& tr);
void write_events_csv(const std::string& path, const hybrid::HybridTrace& tr);

struct TraceTable {
  std::map<std::string, std::string> metadata;
  std::vector<std::string> columns;
  std::vector<Mode> modes;
  std::vector<std::vector<double>> rows;  // numeric columns; the mode column holds its index

  int column(const std::string& name) const;  // -1 if missing
  double at(std::size_t row, const std::string& name) const;
};

/// Parses a trace file; throws Io on unreadable or malformed files.
TraceTable read_trace_csv(const std::string& path);
TraceTable parse_trace_csv(const std::string& text);

void write_text(const std::string& path, const std::string& text);

}  // namespace plugpull::io
