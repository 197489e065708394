#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace iwbench {

/// Per-source-instance importance weights. Convention across the library:
/// entries are nonnegative and the mean over the sample is 1, so that a
/// weighted empirical measure keeps total mass comparable to the uniform one.
/// Methods with an explicit slack (KMM) may deviate from mean 1 by at most
/// their configured epsilon.
struct WeightVector {
    Eigen::VectorXd values;

    Eigen::Index size() const { return values.size(); }

    double mean() const {
        return values.size() == 0 ? 0.0 : values.mean();
    }

    /// Rescales a nonnegative vector to mean 1. An all-zero input has no
    /// well-defined scale and falls back to the uniform vector.
    static WeightVector unit_mean(Eigen::VectorXd raw) {
        if (raw.size() == 0) {
            throw std::invalid_argument("WeightVector: empty weight vector");
        }
        if ((raw.array() < 0.0).any()) {
            throw std::invalid_argument("WeightVector: negative weight");
        }
        const double sum = raw.sum();
        if (sum <= 0.0) {
            raw.setOnes();
        } else {
            raw *= static_cast<double>(raw.size()) / sum;
        }
        return WeightVector{std::move(raw)};
    }

    static WeightVector uniform(Eigen::Index n) {
        return WeightVector{Eigen::VectorXd::Ones(n)};
    }
};

/// Cooperative time budget. Long-running solvers poll expired() between
/// iterations; a default-constructed deadline never expires.
class Deadline {
public:
    Deadline() = default;

    static Deadline in_seconds(double seconds) {
        Deadline d;
        d.at_ = std::chrono::steady_clock::now() +
                std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                    std::chrono::duration<double>(seconds));
        return d;
    }

    bool expired() const {
        return at_.has_value() && std::chrono::steady_clock::now() >= *at_;
    }

private:
    std::optional<std::chrono::steady_clock::time_point> at_;
};

struct TimeoutError : std::runtime_error {
    explicit TimeoutError(const std::string& what) : std::runtime_error(what) {}
};

inline void check_deadline(const Deadline& deadline, const char* where) {
    if (deadline.expired()) {
        throw TimeoutError(std::string(where) + ": time budget exceeded");
    }
}

/// {10^lo, ..., 10^hi}, one value per decade.
inline std::vector<double> decade_grid(int lo_exp, int hi_exp) {
    std::vector<double> grid;
    for (int e = lo_exp; e <= hi_exp; ++e) {
        grid.push_back(std::pow(10.0, e));
    }
    return grid;
}

}  // namespace iwbench
