#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lpgftw/harness.hpp"

namespace lpgftw {

/// Mean learning curve: per seed the curves of tasks with task_index >= first_task
/// are averaged per iteration, then mean and standard error are taken across seeds.
struct CurveSeries {
  std::vector<int> iteration;
  std::vector<double> mean;
  std::vector<double> std_error;
};

CurveSeries aggregate_curves(const std::vector<CurveRow>& rows, int first_task);

/// start / tune / update / final: per-seed task means, then mean and standard error across seeds.
struct BarSeries {
  std::vector<std::string> labels;
  std::vector<double> mean;
  std::vector<double> std_error;
};

BarSeries aggregate_bars(const std::vector<TaskRow>& rows);

/// The aggregated numbers are embedded as JSON in <metadata id="series">.
std::string learning_curve_svg(const CurveSeries& s, const std::string& title);
std::string bar_svg(const BarSeries& s, const std::string& title);

/// Writes learning_curve.svg and phase_bars.svg.
void write_plots(const std::vector<TaskRow>& rows, const std::vector<CurveRow>& curves,
                 int first_task, const std::string& title, const std::filesystem::path& dir);

}  // namespace lpgftw
