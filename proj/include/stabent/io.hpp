#pragma once

// Artifact serialization. JSON objects keep insertion order (stable key
// order) and doubles print in shortest round-trip form, so identical runs
// produce byte-identical files.

#include "stabent/bounds.hpp"
#include "stabent/feedback.hpp"
#include "stabent/models.hpp"
#include "stabent/spanning.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace stabent::io {

using ordered_json = nlohmann::ordered_json;

inline ordered_json to_json(const Box& box) {
  ordered_json j;
  j["lo"] = std::vector<double>(box.lo().data(), box.lo().data() + box.dim());
  j["hi"] = std::vector<double>(box.hi().data(), box.hi().data() + box.dim());
  return j;
}

inline ordered_json to_json(const spanning::EntropyEstimate& est) {
  ordered_json j;
  j["rate"] = est.rate;
  j["rate_at_max"] = est.rate_at_max;
  j["horizons"] = est.horizons;
  j["counts"] = est.counts;
  std::vector<std::string> methods;
  methods.reserve(est.methods.size());
  for (auto m : est.methods) methods.emplace_back(spanning::method_name(m));
  j["methods"] = methods;
  j["grid_size"] = est.grid_size;
  return j;
}

inline ordered_json to_json(const bounds::BoundReport& report) {
  ordered_json j;
  j["lower_general"] = report.lower_general;
  if (report.lower_exponential)
    j["lower_exponential"] = *report.lower_exponential;
  else
    j["lower_exponential"] = nullptr;
  j["upper_lipschitz"] = report.upper_lipschitz;
  if (report.upper_exponential)
    j["upper_exponential"] = *report.upper_exponential;
  else
    j["upper_exponential"] = nullptr;
  if (report.spectral_exact)
    j["spectral_exact"] = *report.spectral_exact;
  else
    j["spectral_exact"] = nullptr;
  j["boundary_ambiguous"] = report.boundary_ambiguous;
  ordered_json meta;
  meta["epsilon"] = report.epsilon;
  meta["zeta"] = report.zeta;
  meta["gamma"] = to_json(report.gamma);
  meta["lambda"] = to_json(report.lambda);
  j["metadata"] = meta;
  return j;
}

inline ordered_json to_json(const models::SynthesisResult& res) {
  ordered_json j;
  j["gain_primary"] = res.gain_primary;
  j["gain_secondary"] = res.gain_secondary;
  ordered_json eqs = ordered_json::array();
  for (const auto& e : res.equilibria) {
    ordered_json one;
    one["location"] = e.location;
    one["jacobian"] = e.jacobian;
    eqs.push_back(one);
  }
  j["equilibria"] = eqs;
  j["alpha"] = res.alpha;
  j["big_m"] = res.big_m;
  j["big_m_is_empirical"] = true;  // fitted on the finite horizon below, not derived
  j["fit_horizon"] = res.fit_horizon;
  j["rho"] = res.rho;
  j["epsilon"] = res.epsilon;
  j["iterations"] = res.iterations;
  j["range_one_sided"] = res.range_one_sided;
  j["control_range"] = to_json(res.control_range);
  j["overshoot_flagged"] = res.overshoot_flagged;
  ordered_json stepping;
  stepping["dt"] = res.stiff.dt;
  stepping["window"] = res.stiff.window;
  stepping["dt_tail"] = res.stiff.dt_tail;
  j["stepping"] = stepping;
  return j;
}

inline ordered_json to_json(const models::VerifyReport& report) {
  ordered_json j;
  j["pass"] = report.pass;
  j["worst_margin"] = report.worst_margin;
  j["worst_index"] = report.worst_index;
  if (report.worst_index >= 0) {
    const auto& worst = report.points[static_cast<std::size_t>(report.worst_index)];
    j["worst_time"] = worst.argmin_time;
    if (worst.argmin_state.size() > 0)
      j["worst_state"] = std::vector<double>(worst.argmin_state.data(),
                                             worst.argmin_state.data() + worst.argmin_state.size());
    j["worst_blew_up"] = worst.blew_up;
  }
  j["points"] = report.points.size();
  return j;
}

inline ordered_json to_json(const feedback::Prop42Report& report) {
  ordered_json j;
  j["spanning_rate"] = report.spanning_rate;
  j["feedback_rate"] = report.feedback_rate;
  j["pass"] = report.pass;
  j["slack"] = feedback::kProp42Slack;
  j["spanning_estimate"] = to_json(report.spanning_estimate);
  j["feedback_estimate"] = to_json(report.feedback_estimate);
  return j;
}

// ---------------------------------------------------------------------------
// CSV builders (comma separated, header row, '.' decimal, no locale)

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i) out_ += ',';
      out_ += header[i];
    }
    out_ += '\n';
    columns_ = header.size();
  }

  void row(const std::vector<double>& values) {
    if (values.size() != columns_) throw PreconditionError("csv row width mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) out_ += ',';
      out_ += format_double(values[i]);
    }
    out_ += '\n';
  }

  const std::string& str() const { return out_; }

 private:
  std::string out_;
  std::size_t columns_ = 0;
};

inline std::string trajectory_csv(const Trajectory& traj, const ControlSignal& signal) {
  std::size_t d = static_cast<std::size_t>(traj.states.front().size());
  std::size_t m = signal.values.empty() ? 0 : static_cast<std::size_t>(signal.values[0].size());
  std::vector<std::string> header{"t"};
  for (std::size_t i = 0; i < d; ++i) header.push_back("x" + std::to_string(i + 1));
  for (std::size_t i = 0; i < m; ++i) header.push_back("u" + std::to_string(i + 1));
  Csv csv(header);
  std::int64_t per_ctrl = signal.step > 0.0 && traj.dt > 0.0
                              ? stabent::detail::exact_ratio(signal.step, traj.dt, "control step")
                              : 1;
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    std::vector<double> row{traj.times[k]};
    for (std::size_t i = 0; i < d; ++i) row.push_back(traj.states[k][static_cast<Eigen::Index>(i)]);
    const Vec& u = signal.values.empty()
                       ? Vec()
                       : signal.at_index(static_cast<std::size_t>(
                             static_cast<std::int64_t>(k) / std::max<std::int64_t>(per_ctrl, 1)));
    for (std::size_t i = 0; i < m; ++i) row.push_back(u[static_cast<Eigen::Index>(i)]);
    csv.row(row);
  }
  return csv.str();
}

// ---------------------------------------------------------------------------

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << content;
}

inline void write_json(const std::filesystem::path& path, const ordered_json& j) {
  write_file(path, j.dump(2) + "\n");
}

}  // namespace stabent::io
