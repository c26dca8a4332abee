#include "qtewma/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "qtewma/errors.hpp"

namespace qtewma {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMatrix> as_matrix(std::span<const double> values, std::size_t d) {
    return {values.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)};
}

Eigen::LLT<Eigen::MatrixXd> cholesky(std::span<const double> covariance, std::size_t d) {
    if (covariance.size() != d * d) {
        throw ShapeError("covariance must be d x d");
    }
    const Eigen::MatrixXd cov = as_matrix(covariance, d);
    if (!cov.isApprox(cov.transpose(), 1e-12)) {
        throw InvalidArgumentError("covariance is not symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
        throw InvalidArgumentError("covariance is not positive definite");
    }
    return llt;
}

bool parse_double(std::string_view cell, double& out) {
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) {
        cell.remove_prefix(1);
    }
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) {
        cell.remove_suffix(1);
    }
    if (cell.empty()) {
        return false;
    }
    if (cell.front() == '+') {
        cell.remove_prefix(1);
    }
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
    return ec == std::errc() && ptr == cell.data() + cell.size();
}

std::vector<std::string_view> split_cells(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            cells.push_back(line.substr(start));
            return cells;
        }
        cells.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

}  // namespace

GaussianLaw GaussianLaw::standard(std::size_t d) {
    GaussianLaw g;
    g.mean.assign(d, 0.0);
    g.covariance.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        g.covariance[i * d + i] = 1.0;
    }
    return g;
}

GaussianLaw GaussianLaw::equicorrelated(std::size_t d, double rho) {
    GaussianLaw g;
    g.mean.assign(d, 0.0);
    g.covariance.assign(d * d, rho);
    for (std::size_t i = 0; i < d; ++i) {
        g.covariance[i * d + i] = 1.0;
    }
    return g;
}

UniformLaw UniformLaw::unit_cube(std::size_t d) {
    return {std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
}

void StreamSpec::validate() const {
    if (dim == 0) {
        throw InvalidArgumentError("stream dimension must be positive");
    }
    if (change) {
        if (change->tau < 1) {
            throw InvalidArgumentError("change point tau must be >= 1");
        }
        if (length > 0 && change->tau >= length) {
            throw InvalidArgumentError("change point tau must be smaller than the stream length");
        }
        if (const auto* ms = std::get_if<MeanShift>(&change->post)) {
            if (!(ms->skl > 0.0)) {
                throw InvalidArgumentError("mean shift needs a positive sKL target");
            }
            if (!std::holds_alternative<GaussianLaw>(phi0)) {
                throw InvalidArgumentError("mean shift is defined for Gaussian phi0 only");
            }
        }
    }
}

double gaussian_symmetric_kl(const GaussianLaw& a, const GaussianLaw& b) {
    const std::size_t d = a.mean.size();
    const Eigen::MatrixXd sa = as_matrix(a.covariance, d);
    const Eigen::MatrixXd sb = as_matrix(b.covariance, d);
    const Eigen::VectorXd diff = Eigen::Map<const Eigen::VectorXd>(b.mean.data(), static_cast<Eigen::Index>(d)) -
                                 Eigen::Map<const Eigen::VectorXd>(a.mean.data(), static_cast<Eigen::Index>(d));
    const Eigen::LLT<Eigen::MatrixXd> la(sa);
    const Eigen::LLT<Eigen::MatrixXd> lb(sb);
    auto logdet = [](const Eigen::LLT<Eigen::MatrixXd>& l) {
        return 2.0 * l.matrixL().toDenseMatrix().diagonal().array().log().sum();
    };
    const auto dd = static_cast<double>(d);
    const double kl_ab = 0.5 * ((lb.solve(sa)).trace() + diff.dot(lb.solve(diff)) - dd + logdet(lb) - logdet(la));
    const double kl_ba = 0.5 * ((la.solve(sb)).trace() + diff.dot(la.solve(diff)) - dd + logdet(la) - logdet(lb));
    return kl_ab + kl_ba;
}

std::vector<double> gaussian_change_mean_shift(std::span<const double> mean, std::span<const double> covariance,
                                               double skl_target, std::uint64_t seed) {
    if (!(skl_target > 0.0)) {
        throw InvalidArgumentError("sKL target must be positive");
    }
    const std::size_t d = mean.size();
    const auto llt = cholesky(covariance, d);
    Rng rng(seed);
    Eigen::VectorXd u(static_cast<Eigen::Index>(d));
    do {
        for (Eigen::Index i = 0; i < u.size(); ++i) {
            u(i) = rng.normal();
        }
    } while (u.norm() == 0.0);
    u.normalize();
    // Equal covariances: sKL = v' inv(S) v.
    const double quad = u.dot(llt.solve(u));
    const Eigen::VectorXd v = std::sqrt(skl_target / quad) * u;
    std::vector<double> out(mean.begin(), mean.end());
    for (std::size_t i = 0; i < d; ++i) {
        out[i] += v(static_cast<Eigen::Index>(i));
    }
    return out;
}

Dataset parse_csv(const std::string& text, bool standardize, double jitter_sigma, std::uint64_t seed) {
    if (jitter_sigma < 0.0) {
        throw InvalidArgumentError("jitter sigma must be >= 0");
    }
    Dataset ds;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    bool first_data = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        const auto cells = split_cells(line);
        std::vector<double> row(cells.size());
        std::size_t bad = cells.size();
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (!parse_double(cells[c], row[c])) {
                bad = c;
                break;
            }
        }
        if (first_data && ds.header.empty() && values.empty() && bad != cells.size()) {
            for (auto cell : cells) {
                ds.header.emplace_back(cell);
            }
            cols = cells.size();
            continue;
        }
        if (bad != cells.size()) {
            throw ParseError("non-numeric cell at row " + std::to_string(line_no) + ", column " +
                             std::to_string(bad + 1));
        }
        if (cols == 0) {
            cols = cells.size();
        }
        if (cells.size() != cols) {
            throw ParseError("row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                             " columns, expected " + std::to_string(cols));
        }
        first_data = false;
        values.insert(values.end(), row.begin(), row.end());
    }
    if (values.empty()) {
        throw ParseError("CSV contains no data rows");
    }
    ds.data = SampleMatrix(cols, std::move(values));
    const std::size_t n = ds.data.rows();
    ds.column_mean.assign(cols, 0.0);
    ds.column_std.assign(cols, 0.0);
    for (std::size_t c = 0; c < cols; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mean += ds.data(i, c);
        }
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            var += (ds.data(i, c) - mean) * (ds.data(i, c) - mean);
        }
        var /= static_cast<double>(n);
        ds.column_mean[c] = mean;
        ds.column_std[c] = std::sqrt(var);
        if (standardize) {
            if (!(var > 0.0)) {
                throw InvalidArgumentError("column " + std::to_string(c + 1) +
                                           " has zero variance and cannot be standardized");
            }
            const double inv = 1.0 / ds.column_std[c];
            for (std::size_t i = 0; i < n; ++i) {
                ds.data(i, c) = (ds.data(i, c) - mean) * inv;
            }
        }
    }
    if (jitter_sigma > 0.0) {
        Rng rng(seed);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < cols; ++c) {
                const double scale = standardize ? 1.0 : (ds.column_std[c] > 0.0 ? ds.column_std[c] : 1.0);
                ds.data(i, c) += jitter_sigma * scale * rng.normal();
            }
        }
    }
    return ds;
}

Dataset ingest_csv(const std::filesystem::path& path, bool standardize, double jitter_sigma, std::uint64_t seed) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read CSV " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_csv(buf.str(), standardize, jitter_sigma, seed);
}

Dataset::Split Dataset::split(std::size_t n_train, std::uint64_t seed) const {
    const std::size_t n = data.rows();
    if (n_train > n) {
        throw InvalidArgumentError("requested " + std::to_string(n_train) + " training rows from a dataset of " +
                                   std::to_string(n));
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[rng.below(i)]);
    }
    Split s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    return s;
}

SampleMatrix Dataset::rows(std::span<const std::size_t> indices) const {
    SampleMatrix out(indices.size(), data.dim());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        std::ranges::copy(data.row(indices[i]), out.row(i).begin());
    }
    return out;
}

LawSampler::LawSampler(const Law& law, std::size_t dim) : law_(law), dim_(dim) {
    if (const auto* g = std::get_if<GaussianLaw>(&law_)) {
        if (g->mean.size() != dim) {
            throw ShapeError("Gaussian mean has the wrong dimension");
        }
        const auto llt = cholesky(g->covariance, dim);
        const Eigen::MatrixXd l = llt.matrixL();
        chol_.resize(dim * dim);
        for (std::size_t i = 0; i < dim; ++i) {
            for (std::size_t j = 0; j < dim; ++j) {
                chol_[i * dim + j] = l(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            }
            total_variance_ += g->covariance[i * dim + i];
        }
    } else if (const auto* u = std::get_if<UniformLaw>(&law_)) {
        if (u->lower.size() != dim || u->upper.size() != dim) {
            throw ShapeError("uniform box has the wrong dimension");
        }
        for (std::size_t i = 0; i < dim; ++i) {
            if (!(u->upper[i] > u->lower[i])) {
                throw InvalidArgumentError("uniform box must have positive width");
            }
            const double w = u->upper[i] - u->lower[i];
            total_variance_ += w * w / 12.0;
        }
    } else {
        const auto& c = std::get<CsvLaw>(law_);
        dataset_ = std::make_shared<const Dataset>(ingest_csv(c.path, c.standardize, c.jitter, 0));
        if (dataset_->data.dim() != dim) {
            throw ShapeError("CSV has " + std::to_string(dataset_->data.dim()) + " columns, stream expects " +
                             std::to_string(dim));
        }
        for (std::size_t k = 0; k < dim; ++k) {
            const double s = c.standardize ? 1.0 : dataset_->column_std[k];
            total_variance_ += s * s;
        }
    }
}

void LawSampler::sample(Rng& rng, std::span<double> out) const {
    if (const auto* g = std::get_if<GaussianLaw>(&law_)) {
        double z[64];
        std::vector<double> zbuf;
        double* zp = z;
        if (dim_ > 64) {
            zbuf.resize(dim_);
            zp = zbuf.data();
        }
        for (std::size_t i = 0; i < dim_; ++i) {
            zp[i] = rng.normal();
        }
        for (std::size_t i = 0; i < dim_; ++i) {
            double acc = g->mean[i];
            const double* row = chol_.data() + i * dim_;
            for (std::size_t j = 0; j <= i; ++j) {
                acc += row[j] * zp[j];
            }
            out[i] = acc;
        }
    } else if (const auto* u = std::get_if<UniformLaw>(&law_)) {
        for (std::size_t i = 0; i < dim_; ++i) {
            out[i] = u->lower[i] + (u->upper[i] - u->lower[i]) * rng.uniform();
        }
    } else {
        const auto row = dataset_->data.row(rng.below(dataset_->data.rows()));
        std::ranges::copy(row, out.begin());
    }
}

StreamGenerator::StreamGenerator(const StreamSpec& spec, std::shared_ptr<const LawSampler> pre,
                                 std::shared_ptr<const LawSampler> post, std::vector<double> shift,
                                 std::vector<std::size_t> csv_rows)
    : dim_(spec.dim),
      length_(spec.length),
      tau_(spec.change ? spec.change->tau : 0),
      has_change_(spec.change.has_value()),
      pre_(std::move(pre)),
      post_(std::move(post)),
      shift_(std::move(shift)),
      csv_rows_(std::move(csv_rows)),
      rng_(Rng::substream(spec.seed, 1)) {}

bool StreamGenerator::next(std::span<double> out) {
    if (t_ >= length_) {
        return false;
    }
    if (out.size() != dim_) {
        throw ShapeError("stream buffer has the wrong dimension");
    }
    const std::size_t t = t_ + 1;
    const bool changed = has_change_ && t >= tau_;
    const LawSampler& law = changed && post_ ? *post_ : *pre_;
    if (law.dataset() != nullptr && &law == pre_.get()) {
        if (t_ >= csv_rows_.size()) {
            throw ExhaustedError("CSV source exhausted after " + std::to_string(csv_rows_.size()) +
                                 " samples; stream length is " + std::to_string(length_));
        }
        std::ranges::copy(law.dataset()->data.row(csv_rows_[t_]), out.begin());
    } else {
        law.sample(rng_, out);
    }
    if (changed && !shift_.empty()) {
        for (std::size_t i = 0; i < dim_; ++i) {
            out[i] += shift_[i];
        }
    }
    t_ = t;
    return true;
}

StreamFactory::StreamFactory(StreamSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    pre_ = std::make_shared<const LawSampler>(spec_.phi0, spec_.dim);
    if (spec_.change) {
        if (const auto* law = std::get_if<Law>(&spec_.change->post)) {
            post_ = std::make_shared<const LawSampler>(*law, spec_.dim);
        }
    }
}

StreamGenerator StreamFactory::stream_for(std::uint64_t seed, std::vector<std::size_t> csv_rows) const {
    StreamSpec s = spec_;
    s.seed = seed;
    std::vector<double> shift;
    if (s.change) {
        if (const auto* ms = std::get_if<MeanShift>(&s.change->post)) {
            const auto& g = std::get<GaussianLaw>(s.phi0);
            shift = gaussian_change_mean_shift(g.mean, g.covariance, ms->skl, mix_seed(seed, 2));
            for (std::size_t i = 0; i < s.dim; ++i) {
                shift[i] -= g.mean[i];
            }
        } else if (const auto* rs = std::get_if<RandomShift>(&s.change->post)) {
            Rng rng = Rng::substream(seed, 2);
            shift.resize(s.dim);
            for (double& v : shift) {
                v = rng.normal() * rs->scale * pre_->total_variance();
            }
        }
    }
    if (pre_->dataset() != nullptr && csv_rows.empty()) {
        const auto split = pre_->dataset()->split(0, mix_seed(seed, 3));
        csv_rows = split.test;
    }
    return StreamGenerator(s, pre_, post_, std::move(shift), std::move(csv_rows));
}

StreamFactory::Run StreamFactory::make_run(std::uint64_t run_seed, std::size_t n_train) const {
    if (const Dataset* ds = pre_->dataset()) {
        const auto split = ds->split(n_train, mix_seed(run_seed, 3));
        return {ds->rows(split.train), stream_for(run_seed, split.test)};
    }
    SampleMatrix train(n_train, spec_.dim);
    Rng rng = Rng::substream(run_seed, 4);
    for (std::size_t i = 0; i < n_train; ++i) {
        pre_->sample(rng, train.row(i));
    }
    return {std::move(train), stream_for(run_seed, {})};
}

SampleMatrix collect(StreamGenerator stream) {
    SampleMatrix out;
    std::vector<double> x(stream.dim());
    while (stream.next(x)) {
        out.append(x);
    }
    return out;
}

}  // namespace qtewma
