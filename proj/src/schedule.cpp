#include "voxdiff/schedule.hpp"

#include <string>

namespace voxdiff {

namespace {

void check_t(const NoiseSchedule& s, int t, int lo, const char* what) {
    if (t < lo || t > s.T)
        throw ConfigError(std::string(what) + ": t=" + std::to_string(t) +
                          " outside [" + std::to_string(lo) + ", " + std::to_string(s.T) + "]");
}

void check_classes(int num_classes) {
    if (num_classes < 2 || num_classes > 256)
        throw ConfigError("num_classes must be in [2, 256], got " + std::to_string(num_classes));
}

} // namespace

double NoiseSchedule::beta(int t) const {
    check_t(*this, t, 1, "beta");
    return betas[size_t(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
    check_t(*this, t, 0, "alpha_bar");
    return alpha_bars[size_t(t)];
}

NoiseSchedule schedule_from_betas(std::vector<double> betas) {
    if (betas.empty()) throw ConfigError("schedule needs at least one step");
    NoiseSchedule s;
    s.T = int(betas.size());
    for (size_t i = 0; i < betas.size(); ++i)
        if (!(betas[i] >= 0.0 && betas[i] <= 1.0))
            throw ConfigError("beta_" + std::to_string(i + 1) + " = " + std::to_string(betas[i]) +
                              " outside [0, 1]");
    s.betas = std::move(betas);
    s.alpha_bars.resize(size_t(s.T) + 1);
    s.alpha_bars[0] = 1.0;
    for (int t = 1; t <= s.T; ++t)
        s.alpha_bars[size_t(t)] = s.alpha_bars[size_t(t - 1)] * (1.0 - s.betas[size_t(t - 1)]);
    return s;
}

NoiseSchedule default_schedule(int T) {
    if (T < 1) throw ConfigError("schedule length T must be >= 1, got " + std::to_string(T));
    std::vector<double> betas(static_cast<size_t>(T));
    for (int t = 1; t <= T; ++t) betas[size_t(t - 1)] = 1.0 / double(T - t + 1);
    return schedule_from_betas(std::move(betas));
}

MixtureRow q_step_coeffs(const NoiseSchedule& s, int t, int num_classes) {
    check_classes(num_classes);
    double b = s.beta(t);
    return MixtureRow{1.0 - b + b / num_classes, b / num_classes};
}

MixtureRow q_cumulative_coeffs(const NoiseSchedule& s, int t, int num_classes) {
    check_classes(num_classes);
    double ab = s.alpha_bar(t);
    return MixtureRow{ab + (1.0 - ab) / num_classes, (1.0 - ab) / num_classes};
}

namespace {

std::vector<double> mixture_row(MixtureRow m, int from, int num_classes) {
    if (from < 0 || from >= num_classes)
        throw ConfigError("source class " + std::to_string(from) + " out of range for K=" +
                          std::to_string(num_classes));
    std::vector<double> row(size_t(num_classes), m.off);
    row[size_t(from)] = m.diag;
    return row;
}

} // namespace

std::vector<double> q_step_row(const NoiseSchedule& s, int t, int from, int num_classes) {
    return mixture_row(q_step_coeffs(s, t, num_classes), from, num_classes);
}

std::vector<double> q_cumulative_row(const NoiseSchedule& s, int t, int from, int num_classes) {
    return mixture_row(q_cumulative_coeffs(s, t, num_classes), from, num_classes);
}

} // namespace voxdiff
