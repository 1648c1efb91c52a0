#include "fte/verify.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <sstream>

#include "fte/augment.hpp"
#include "fte/config.hpp"
#include "fte/ensemble.hpp"
#include "fte/episodes.hpp"
#include "fte/errors.hpp"
#include "fte/io.hpp"
#include "fte/labelprop.hpp"
#include "fte/network.hpp"
#include "fte/pipeline.hpp"
#include "fte/synthetic.hpp"

namespace fte::verify {

namespace {

using Clock = std::chrono::steady_clock;

CheckResult timed(int id, std::string name, double limit, const std::function<bool(std::ostringstream&)>& body) {
  CheckResult r;
  r.id = id;
  r.name = std::move(name);
  r.limit_seconds = limit;
  std::ostringstream detail;
  detail.precision(6);
  const auto t0 = Clock::now();
  try {
    r.passed = body(detail);
  } catch (const std::exception& e) {
    detail << " exception: " << e.what();
    r.passed = false;
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  if (r.seconds > limit) {
    detail << " over time budget (" << limit << "s)";
    r.passed = false;
  }
  r.detail = detail.str();
  return r;
}

Matrix gaussian(int rows, int cols, RngStream& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

double rel_err(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// sum_{t < terms} (alpha L)^t Y0
Matrix neumann(const Matrix& l, const Matrix& y0, double alpha, int terms) {
  Matrix acc = y0;
  Matrix term = y0;
  for (int t = 1; t < terms; ++t) {
    term = alpha * (l * term);
    acc += term;
  }
  return acc;
}

SyntheticSpec small_blobs(std::uint64_t seed) {
  SyntheticSpec s;
  s.dim = 16;
  s.source_classes = 6;
  s.target_classes = 5;
  s.source_per_class = 40;
  s.target_per_class = 30;
  s.seed = seed;
  return s;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.hidden = {32};
  c.feature_dim = 16;
  c.pretrain_epochs = 15;
  c.lr_pretrain = 0.01;
  c.finetune_epochs = 30;
  c.episodes = 10;
  return c;
}

}  // namespace

CheckResult check_frobenius_svd() {
  return timed(1, "frobenius equals sum of squared singular values", 5.0, [](std::ostringstream& d) {
    RngStream rng(11, 1);
    double worst = 0.0;
    double worst_own = 0.0;
    const int trials = 120;
    for (int t = 0; t < trials; ++t) {
      const int b = 1 + static_cast<int>(rng.uniform_index(16));
      const int m = 1 + static_cast<int>(rng.uniform_index(16));
      const Matrix f = gaussian(b, m, rng, std::exp(rng.uniform(-3.0, 3.0)));
      const Eigen::JacobiSVD<Eigen::MatrixXd> svd(f);
      const double oracle = svd.singularValues().squaredNorm();
      worst = std::max(worst, rel_err(loss_bsr(f), oracle, 0.0));
      worst_own = std::max(worst_own, rel_err(singular_values(f).squaredNorm(), oracle, 0.0));
    }
    d << trials << " matrices, max rel err " << worst << ", own svd " << worst_own;
    return worst <= 1e-8 && worst_own <= 1e-8;
  });
}

CheckResult check_gradients() {
  return timed(2, "analytic gradients match finite differences", 60.0, [](std::ostringstream& d) {
    const double h = 1e-5;
    double worst = 0.0;
    int configs = 0;
    RngStream rng(12, 2);
    for (int image = 0; image < 2; ++image)
      for (double lambda : {0.0, 0.001, 0.1})
        for (double beta : {0.0, 0.1})
          for (int ens = 0; ens < 2; ++ens) {
            const BackboneConfig cfg = image ? BackboneConfig::image_mode(2, 4, 4, {3}, {5}, 4)
                                             : BackboneConfig::vector_mode(6, {7}, 5);
            const Projection proj = ens ? make_projection(cfg.feature_dim, rng.split(static_cast<std::uint64_t>(configs)))
                                        : identity_projection(cfg.feature_dim);
            const int classes = 3;
            RngStream init = rng.split(100 + static_cast<std::uint64_t>(configs));
            NetParams params = init_params(cfg, proj.out_dim(), classes, init);
            const int b = 3 + configs % 4;
            TrainBatch batch{gaussian(b, cfg.flat_input(), init), {}};
            for (int i = 0; i < b; ++i) batch.labels.push_back(static_cast<int>(init.uniform_index(classes)));
            const Matrix query = gaussian(4, cfg.flat_input(), init);
            const LossTerms terms{lambda, beta};
            NetParams grads;
            backward(params, cfg, proj.matrix, batch, &query, terms, grads);
            zip_params(
                [&](bool, auto& w, const auto& g) {
                  for (Eigen::Index i = 0; i < w.size(); ++i) {
                    const double keep = w.data()[i];
                    w.data()[i] = keep + h;
                    const double up = loss_value(params, cfg, proj.matrix, batch, &query, terms).total;
                    w.data()[i] = keep - h;
                    const double down = loss_value(params, cfg, proj.matrix, batch, &query, terms).total;
                    w.data()[i] = keep;
                    worst = std::max(worst, rel_err(g.data()[i], (up - down) / (2.0 * h), 1e-6));
                  }
                },
                params, grads);
            ++configs;
          }
    d << configs << " configs, max rel err " << worst;
    return configs >= 20 && worst <= 1e-4;
  });
}

CheckResult check_projections() {
  return timed(3, "random projections are orthonormal and seeded", 10.0, [](std::ostringstream& d) {
    double worst = 0.0;
    bool deterministic = true;
    for (int i = 0; i < 50; ++i) {
      const int m = 2 + (i * 13) % 63;  // 2..64
      const Projection p = make_projection(m, RngStream(1000 + static_cast<std::uint64_t>(i), 5));
      const Matrix e = p.matrix;
      worst = std::max(worst, max_abs(Matrix(e * e.transpose() - Matrix::Identity(m - 1, m - 1))));
      deterministic = deterministic && make_projection(m, RngStream(1000 + static_cast<std::uint64_t>(i), 5)).matrix == e;
    }
    // Same size, different seed: must differ.
    bool distinct = true;
    int compared = 0;
    for (int m : {8, 16, 64}) {
      std::vector<Matrix> same;
      for (std::uint64_t s = 0; s < 10; ++s) same.push_back(make_projection(m, RngStream(s, 5)).matrix);
      for (std::size_t a = 0; a < same.size(); ++a)
        for (std::size_t b = a + 1; b < same.size(); ++b, ++compared)
          distinct = distinct && max_abs(Matrix(same[a] - same[b])) > 1e-6;
    }
    d << "max |EE^T - I| " << worst << ", deterministic " << deterministic << ", " << compared << " distinct pairs ok "
      << distinct;
    return worst <= 1e-8 && deterministic && distinct;
  });
}

CheckResult check_lp_oracle() {
  return timed(4, "propagation matches the power series", 10.0, [](std::ostringstream& d) {
    RngStream rng(14, 4);
    double worst = 0.0;
    for (int g = 0; g < 20; ++g) {
      const int n = 5 + static_cast<int>(rng.uniform_index(46));
      const int k = 1 + static_cast<int>(rng.uniform_index(std::min(10, n - 1)));
      LPConfig cfg;
      cfg.k = k;
      const Matrix feats = gaussian(n, 3 + g % 5, rng);
      const Matrix y0 = confidence_filter(softmax_rows(gaussian(n, 4, rng)), 0.2);
      const Matrix l = normalized_laplacian(knn_graph(feats, cfg));
      const Matrix solved = propagate(l, y0, 0.5);
      worst = std::max(worst, max_abs(Matrix(solved - neumann(l, y0, 0.5, 200))));
    }
    const Matrix y0 = softmax_rows(gaussian(6, 3, rng));
    const Matrix l = Matrix::Constant(6, 6, 0.1);
    const bool alpha0 = propagate(l, y0, 0.0) == y0;

    Matrix two_l(2, 2);
    two_l << 0, 1, 1, 0;
    Matrix two_y(2, 2);
    two_y << 1, 0, 0, 0;
    Matrix expect(2, 2);
    expect << 4.0 / 3.0, 0, 2.0 / 3.0, 0;
    const double direct = max_abs(Matrix(propagate(two_l, two_y, 0.5) - expect));
    // Same case through the graph builder: two points, k = 1.
    LPConfig one;
    one.k = 1;
    Matrix pts(2, 2);
    pts << 0, 0, 1, 0;
    const double built = max_abs(Matrix(propagate(normalized_laplacian(knn_graph(pts, one)), two_y, 0.5) - expect));
    d << "20 graphs max diff " << worst << ", alpha=0 exact " << alpha0 << ", 2-node err " << std::max(direct, built);
    return worst <= 1e-6 && alpha0 && direct <= 1e-12 && built <= 1e-12;
  });
}

CheckResult check_lp_clusters() {
  return timed(5, "propagation labels two clusters from one seed each", 5.0, [](std::ostringstream& d) {
    RngStream rng(15, 5);
    const int per = 40;
    Matrix feats(2 * per, 2);
    std::vector<int> truth;
    for (int i = 0; i < 2 * per; ++i) {
      const double cx = i < per ? -4.0 : 4.0;
      feats(i, 0) = cx + 0.7 * rng.normal();
      feats(i, 1) = 0.7 * rng.normal();
      truth.push_back(i < per ? 0 : 1);
    }
    Matrix y0 = Matrix::Zero(2 * per, 2);
    y0(0, 0) = 1.0;
    y0(per, 1) = 1.0;
    LPConfig cfg;
    const LPResult r = lp_predict(feats, y0, cfg);
    const double acc = accuracy(r.labels, truth);
    d << "accuracy " << acc << (r.fallback ? " (fallback: " + r.reason + ")" : "");
    return !r.fallback && acc >= 0.95;
  });
}

CheckResult check_protocol() {
  return timed(6, "episode protocol arithmetic", 1.0, [](std::ostringstream& d) {
    const std::vector<double> pair = {0.0, 1.0};
    const Summary s = evaluate(pair);
    const std::vector<double> flat(30, 0.7);
    const Summary c = evaluate(flat);
    Dataset data;
    data.channels = 2;
    data.inputs.resize(10 * 25, 2);
    for (int i = 0; i < 250; ++i) {
      data.inputs(i, 0) = i;
      data.inputs(i, 1) = -i;
      data.labels.push_back(i / 25);
    }
    data.role = DatasetRole::target;
    const Episode ep = sample_episode(data, 5, 5, 15, RngStream(16, 6));
    std::vector<int> all = ep.support_items;
    all.insert(all.end(), ep.query_items.begin(), ep.query_items.end());
    std::sort(all.begin(), all.end());
    const bool disjoint = std::adjacent_find(all.begin(), all.end()) == all.end();
    const double expected_ci = 1.96 * std::sqrt(0.5) / std::sqrt(2.0);
    d << "mean " << s.mean << " ci95 " << s.ci95 << ", constant ci95 " << c.ci95 << ", support " << ep.support.rows()
      << " query " << ep.query.rows() << " disjoint " << disjoint;
    return s.mean == 0.5 && std::abs(s.ci95 - expected_ci) <= 1e-12 && std::abs(s.ci95 - 0.98) <= 0.005 && c.ci95 == 0.0 &&
           ep.support.rows() == 25 && ep.query.rows() == 75 && ep.support_items.size() == 25 &&
           ep.query_items.size() == 75 && disjoint;
  });
}

ExperimentConfig end_to_end_config() {
  ExperimentConfig c;
  apply_preset(c, "BSR+LP+ENT");
  c.ensemble = true;
  c.M = 4;
  c.K = 5;
  c.N = 5;
  c.Q = 15;
  c.episodes = 100;
  c.hidden = {64};
  c.feature_dim = 32;
  c.pretrain_epochs = 30;
  c.lr_pretrain = 0.01;
  c.finetune_epochs = 50;
  c.seed = 3;
  return c;
}

CheckResult check_end_to_end(const std::string& workdir) {
  return timed(7, "end-to-end synthetic run beats chance", 600.0, [&](std::ostringstream& d) {
    namespace fs = std::filesystem;
    SyntheticSpec spec;  // blobs: 8 source classes, 5 held-out affine-shifted target classes
    spec.target_per_class = 200;
    const fs::path real_dir = fs::path(workdir) / "synthetic";
    write_synthetic(generate_synthetic(spec), real_dir.string());
    SyntheticSpec scrambled = spec;
    scrambled.scramble_labels = true;
    const fs::path control_dir = fs::path(workdir) / "synthetic_control";
    write_synthetic(generate_synthetic(scrambled), control_dir.string());

    ExperimentConfig cfg = end_to_end_config();
    auto run = [&](const fs::path& dir) {
      ExperimentConfig c = cfg;
      c.source_path = (dir / "source.fte1").string();
      c.target_path = (dir / "target.fte1").string();
      return run_experiment(c).report;
    };
    const EvalReport a = run(real_dir);
    const EvalReport b = run(real_dir);
    const EvalReport ctl = run(control_dir);
    const double sigma = a.ci95 / 1.96;
    const double sigma_ctl = ctl.ci95 / 1.96;
    const bool beats = a.mean - 0.2 >= 10.0 * sigma;
    const bool control = std::abs(ctl.mean - 0.2) <= 3.0 * sigma_ctl;
    const bool identical = a.to_json() == b.to_json();
    d << "mean " << a.mean << " sigma " << sigma << " (" << (a.mean - 0.2) / sigma << " sigma above chance), control mean "
      << ctl.mean << " sigma " << sigma_ctl << " (" << (ctl.mean - 0.2) / sigma_ctl << " sigma from chance), rerun identical "
      << identical;
    return beats && control && identical;
  });
}

CheckResult check_bsr_effect() {
  return timed(8, "batch spectral penalty lowers the probe spectrum", 120.0, [](std::ostringstream& d) {
    int wins = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const SyntheticData data = generate_synthetic(small_blobs(seed));
      ExperimentConfig c = small_config();
      c.seed = seed;
      c.lambda = 0.0;
      const PretrainResult off = pretrain(data.source, c);
      c.lambda = 0.001;
      const PretrainResult on = pretrain(data.source, c);
      const Matrix probe = data.source.inputs.topRows(64);
      const double b_off = loss_bsr(branch_features(off.model.branches[0], off.model.backbone, probe));
      const double b_on = loss_bsr(branch_features(on.model.branches[0], on.model.backbone, probe));
      d << "seed " << seed << ": " << b_off << " -> " << b_on << "; ";
      if (b_on < b_off) ++wins;
    }
    d << wins << "/5 lower";
    return wins >= 4;
  });
}

CheckResult check_entropy_effect() {
  return timed(9, "entropy term lowers query entropy", 120.0, [](std::ostringstream& d) {
    const SyntheticData data = generate_synthetic(small_blobs(9));
    ExperimentConfig c = small_config();
    const PretrainResult pre = pretrain(data.source, c);
    double off = 0.0;
    double on = 0.0;
    for (int e = 0; e < 10; ++e) {
      c.ent = false;
      off += run_episode(pre.model, data.target, c, e).query_entropy / 10.0;
      c.ent = true;
      c.beta = 0.1;
      on += run_episode(pre.model, data.target, c, e).query_entropy / 10.0;
    }
    d << "mean query entropy beta=0 " << off << ", beta=0.1 " << on;
    return on <= off;
  });
}

CheckResult check_augmentation() {
  return timed(10, "augmentation identities and expansion", 5.0, [](std::ostringstream& d) {
    RngStream rng(20, 10);
    Image img(3, 9, 7);
    for (double& p : img.pixels) p = rng.uniform();
    const bool flip = hflip(hflip(img)) == img;
    const bool rot = max_abs_diff(rotate(img, 0.0), img) <= 1e-12;
    const double resize = max_abs_diff(resize_bilinear(img, img.height, img.width), img);

    const CompoundMode mode = CompoundMode::parse("S+SJHR+SR+SJ+SH");
    AugmentSettings settings;
    settings.out_h = 8;
    settings.out_w = 8;
    std::vector<LabeledImage> support;
    for (int i = 0; i < 25; ++i) support.push_back({img, i / 5});
    RngStream aug = rng.split(1);
    const auto expanded = expand_support(support, mode, settings, aug);
    bool labels_ok = expanded.size() == 125;
    for (std::size_t i = 0; labels_ok && i < expanded.size(); ++i)
      labels_ok = expanded[i].label == static_cast<int>(i / 5) / 5 && expanded[i].image.height == 8;

    int calls = 0;
    const PredictFn alternate = [&calls](const Image&) {
      Vector v(2);
      v << (calls % 2 == 0 ? 1.0 : 0.0), (calls % 2 == 0 ? 0.0 : 1.0);
      ++calls;
      return v;
    };
    RngStream tta_rng = rng.split(2);
    const Vector tta = tta_predict(alternate, img, CompoundMode::parse("S+SH"), settings, tta_rng);
    const bool tta_ok = tta.size() == 2 && std::abs(tta(0) - 0.5) <= 1e-12 && std::abs(tta(1) - 0.5) <= 1e-12;
    d << "flip " << flip << ", rotate(0) " << rot << ", identity resize err " << resize << ", expanded " << expanded.size()
      << " labels ok " << labels_ok << ", tta " << tta_ok;
    return flip && rot && resize <= 1e-6 && labels_ok && tta_ok;
  });
}

std::vector<CheckResult> run_all(const Options& opts) {
  std::vector<CheckResult> out;
  out.push_back(check_frobenius_svd());
  out.push_back(check_gradients());
  out.push_back(check_projections());
  out.push_back(check_lp_oracle());
  out.push_back(check_lp_clusters());
  out.push_back(check_protocol());
  if (opts.include_end_to_end) out.push_back(check_end_to_end(opts.workdir));
  out.push_back(check_bsr_effect());
  out.push_back(check_entropy_effect());
  out.push_back(check_augmentation());
  return out;
}

std::string format(const CheckResult& r) {
  std::ostringstream os;
  os.precision(3);
  os << (r.passed ? "[PASS] " : "[FAIL] ") << r.id << ' ' << r.name << " (" << std::fixed << r.seconds << "s): " << r.detail;
  return os.str();
}

}  // namespace fte::verify
