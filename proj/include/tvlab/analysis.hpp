#pragma once

#include "tvlab/intervene.hpp"

namespace tvlab {

// Mean squared distance to the centroid. All vectors must share a locus
// (layer, role, example) and come from distinct prompt seeds.
double dispersion(const std::vector<TaskVector>& vectors);

// Mean Euclidean norm.
double mean_magnitude(const std::vector<TaskVector>& vectors);

struct TrajectoryPoint {
    int k = 0;
    double dispersion = 0.0;
    double magnitude = 0.0;
    int n = 0;
};

// Dispersion and magnitude of n_samples vectors per k, extracted at a shared
// layer (callers pass the mode best layer across tasks).
std::vector<TrajectoryPoint> trajectory(const Model& model, const TaskCorpus& corpus,
                                        const std::string& task, const std::vector<int>& ks,
                                        int layer, int n_samples, const Dataset& demo_pool,
                                        uint64_t seed, size_t workers = 0);

struct VectorGroup {
    std::string task;
    int k = 0;
    std::vector<Eigen::VectorXf> vectors;
};

struct ProjectionPoint {
    std::string task;
    int k = 0;
    double x = 0.0;
    double y = 0.0;
};

struct ProjectionResult {
    std::vector<ProjectionPoint> points;       // one per group (its centroid)
    std::vector<double> explained;             // variance ratios, non-increasing
};

// Per-group mean vectors projected onto the top principal components of the
// centroid covariance. Deterministic: fixed eigensolver and a sign convention
// that makes each axis's largest-magnitude loading positive.
ProjectionResult centroids_and_projection(const std::vector<VectorGroup>& groups,
                                          int components = 2);

}  // namespace tvlab
