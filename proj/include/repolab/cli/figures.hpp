#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "repolab/analysis/drift.hpp"
#include "repolab/analysis/neurons.hpp"
#include "repolab/attacks/report.hpp"
#include "repolab/evalkit/reports.hpp"

namespace repolab::cli {

enum class FigureFormat { Csv, Svg };

// Throws UnsupportedArtifact for anything but "csv" and "svg".
FigureFormat parse_figure_format(const std::string& name);

using AlignmentCurves = std::vector<analysis::AlignmentCurve>;
using SweepTable = std::vector<attacks::SweepRow>;

// monostate stands for an artifact kind with no figure form.
using Artifact =
    std::variant<std::monostate, analysis::DriftMap, AlignmentCurves, evalkit::ScatterData, SweepTable>;

// Throws UnsupportedArtifact.
std::string render_figure(const Artifact& artifact, FigureFormat format);
void emit_figure(const Artifact& artifact, FigureFormat format, const std::filesystem::path& path);

// Minimal RFC 4180 reader/writer: fields holding a comma, quote or newline
// are quoted. write_csv(parse_csv(s)) == s for any text write_csv produced.
using CsvTable = std::vector<std::vector<std::string>>;
CsvTable parse_csv(const std::string& text);
std::string write_csv(const CsvTable& table);

}  // namespace repolab::cli
