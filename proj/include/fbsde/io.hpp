#pragma once

#include "fbsde/density.hpp"
#include "fbsde/feynman_kac.hpp"
#include "fbsde/local_time.hpp"
#include "fbsde/malliavin.hpp"
#include "fbsde/pricing.hpp"
#include "fbsde/zvonkin.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace fbsde {

using nlohmann::json;

/// Column-oriented table; all columns have the same length.
struct CsvTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;

  void add(std::string name, std::vector<double> values);
  std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }
};

/// Doubles are written with 17 significant digits so files round-trip.
std::string to_csv(const CsvTable& table);
void write_text(const std::filesystem::path& file, const std::string& text);
/// Two-space indented JSON with a trailing newline.
std::string to_text(const json& doc);

json to_json(const SpaceTimeGrid& grid);
json to_json(const MeanSE& s);
json to_json(const ExitStats& e);
json to_json(const NoiseSanity& n);
json to_json(const ResidualStats& r);
json to_json(const GradientBoundReport& g);
json to_json(const AssumptionAudit& a);
json to_json(const TailReport& t);
/// Scalars only; curves go to CSV through `bound_curves`.
json to_json(const BoundReport& b);
json to_json(const ComonotonicityReport& c);
json to_json(const ComparisonReport& c);
json to_json(const CovarianceBoundsReport& c);
json to_json(const LocalTimeIntegral& l);
json to_json(const CorrespondenceReport& c);
json to_json(const DensityTransferReport& d);
json to_json(const FlowRouteReport& m);
json to_json(const ZvonkinTransform& z);
json to_json(const TransformedCoefficients& c);
json to_json(const SwitchingAudit& s);

/// x, kde, se, lower, upper.
CsvTable bound_curves(const BoundReport& b);
/// x, density (plus se when present).
CsvTable density_curve(const DensityEstimate& d);
/// One slice of a grid matrix per column: x, then `name`_t<m> for each m.
CsvTable slices(const SpaceGrid& space, const Matrix& values, const std::vector<int>& rows,
                const std::string& name);

}  // namespace fbsde
