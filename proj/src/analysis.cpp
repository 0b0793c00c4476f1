#include "tvlab/analysis.hpp"

#include <Eigen/Eigenvalues>
#include <set>

namespace tvlab {

namespace {

void check_common_locus(const std::vector<TaskVector>& vectors) {
    check(!vectors.empty(), "no vectors");
    const auto& first = vectors.front().prov;
    std::set<uint64_t> seeds;
    for (const auto& v : vectors) {
        check(v.prov.layer == first.layer && v.prov.role == first.role &&
                  v.prov.example_index == first.example_index,
              "vectors mix provenance loci (layer/role/example)");
        check(v.values.size() == vectors.front().values.size(), "vector dimensions differ");
        check(seeds.insert(v.prov.prompt_seed).second,
              "duplicate prompt seed among vectors; dispersion needs distinct prompts");
    }
}

}  // namespace

double dispersion(const std::vector<TaskVector>& vectors) {
    check_common_locus(vectors);
    const auto n = static_cast<double>(vectors.size());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(vectors.front().values.size());
    for (const auto& v : vectors) mean += v.values.cast<double>();
    mean /= n;
    double sum = 0.0;
    for (const auto& v : vectors) {
        sum += (v.values.cast<double>() - mean).squaredNorm();
    }
    return sum / n;
}

double mean_magnitude(const std::vector<TaskVector>& vectors) {
    check(!vectors.empty(), "no vectors");
    double sum = 0.0;
    for (const auto& v : vectors) sum += v.values.cast<double>().norm();
    return sum / static_cast<double>(vectors.size());
}

std::vector<TrajectoryPoint> trajectory(const Model& model, const TaskCorpus& corpus,
                                        const std::string& task, const std::vector<int>& ks,
                                        int layer, int n_samples, const Dataset& demo_pool,
                                        uint64_t seed, size_t workers) {
    check(n_samples >= 1, "trajectory: n_samples must be >= 1");
    const auto& vocab = corpus.vocab();
    std::vector<TrajectoryPoint> out;
    for (int k : ks) {
        std::vector<TaskVector> vectors(static_cast<size_t>(n_samples));
        parallel_for(static_cast<size_t>(n_samples), workers, [&](size_t i) {
            const uint64_t prompt_seed =
                derive_seed(seed, "trajectory", task, static_cast<uint64_t>(k) * 100000 + i);
            auto layout =
                build_prompt(vocab, task, demo_pool, k, demo_pool[i % demo_pool.size()], true,
                             prompt_seed);
            vectors[i] = extract_task_vector(model, layout, layer, TokenRole::COLON_PRE_ANSWER, k,
                                             prompt_seed);
        });
        TrajectoryPoint p;
        p.k = k;
        p.dispersion = dispersion(vectors);
        p.magnitude = mean_magnitude(vectors);
        p.n = n_samples;
        out.push_back(p);
    }
    return out;
}

ProjectionResult centroids_and_projection(const std::vector<VectorGroup>& groups, int components) {
    check(groups.size() >= 2, "projection needs at least 2 groups");
    check(components >= 1, "projection needs at least 1 component");
    const auto d = static_cast<Eigen::Index>(groups.front().vectors.at(0).size());

    Eigen::MatrixXd means(static_cast<Eigen::Index>(groups.size()), d);
    for (size_t g = 0; g < groups.size(); ++g) {
        check(!groups[g].vectors.empty(), "empty group '" + groups[g].task + "'");
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
        for (const auto& v : groups[g].vectors) {
            check(v.size() == d, "vector dimensions differ across groups");
            mean += v.cast<double>();
        }
        means.row(static_cast<Eigen::Index>(g)) =
            (mean / static_cast<double>(groups[g].vectors.size())).transpose();
    }

    const Eigen::RowVectorXd center = means.colwise().mean();
    Eigen::MatrixXd b = means.rowwise() - center;
    const Eigen::MatrixXd cov = (b.transpose() * b) / static_cast<double>(groups.size());
    const double total_var = cov.trace();
    check(total_var > 0.0, "projection input has rank 0 (all centroids identical)");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    check(solver.info() == Eigen::Success, "eigendecomposition failed");
    const auto& evals = solver.eigenvalues();   // ascending
    const auto& evecs = solver.eigenvectors();

    const int n_comp = std::min<int>(components, static_cast<int>(d));
    ProjectionResult out;
    Eigen::MatrixXd axes(d, n_comp);
    for (int c = 0; c < n_comp; ++c) {
        Eigen::VectorXd axis = evecs.col(d - 1 - c);
        // sign convention: the largest-magnitude loading is positive
        Eigen::Index imax = 0;
        axis.cwiseAbs().maxCoeff(&imax);
        if (axis(imax) < 0.0) axis = -axis;
        axes.col(c) = axis;
        out.explained.push_back(std::max(0.0, evals(d - 1 - c)) / total_var);
    }

    const Eigen::MatrixXd coords = b * axes;
    for (size_t g = 0; g < groups.size(); ++g) {
        ProjectionPoint p;
        p.task = groups[g].task;
        p.k = groups[g].k;
        p.x = coords(static_cast<Eigen::Index>(g), 0);
        p.y = n_comp > 1 ? coords(static_cast<Eigen::Index>(g), 1) : 0.0;
        out.points.push_back(p);
    }
    return out;
}

}  // namespace tvlab
