#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "fte/config.hpp"
#include "fte/episodes.hpp"
#include "fte/io.hpp"
#include "fte/synthetic.hpp"

using namespace fte;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fte_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Dataset toy(int classes, int per_class, int dim = 3) {
  Dataset d;
  d.channels = dim;
  d.inputs.resize(classes * per_class, dim);
  for (int i = 0; i < classes * per_class; ++i) {
    for (int j = 0; j < dim; ++j) d.inputs(i, j) = i + 0.25 * j;
    d.labels.push_back(10 + i % classes);
  }
  return d;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

}  // namespace

TEST(Episodes, SummaryStatistics) {
  const std::vector<double> a = {0.0, 1.0};
  const Summary s = evaluate(a);
  EXPECT_EQ(s.mean, 0.5);
  EXPECT_NEAR(s.ci95, 0.98, 1e-3);
  const std::vector<double> c(17, 0.3);
  EXPECT_EQ(evaluate(c).ci95, 0.0);
  EXPECT_EQ(evaluate(c).mean, 0.3);
  const std::vector<double> one = {0.7};
  EXPECT_EQ(evaluate(one).ci95, 0.0);
  const std::vector<double> v = {0.2, 0.4, 0.9, 0.5};
  const double m = 0.5, sd = std::sqrt((0.09 + 0.01 + 0.16 + 0.0) / 3.0);
  EXPECT_NEAR(evaluate(v).mean, m, 1e-15);
  EXPECT_NEAR(evaluate(v).ci95, 1.96 * sd / 2.0, 1e-15);
  EXPECT_THROW(evaluate({}), Error);
}

TEST(Episodes, SamplingCountsAndRelabelling) {
  const Dataset d = toy(7, 30);
  const Episode ep = sample_episode(d, 5, 5, 15, RngStream(1, 2));
  EXPECT_EQ(ep.ways(), 5);
  EXPECT_EQ(ep.support.rows(), 25);
  EXPECT_EQ(ep.query.rows(), 75);
  std::set<int> items(ep.support_items.begin(), ep.support_items.end());
  for (int q : ep.query_items) EXPECT_TRUE(items.insert(q).second);
  for (std::size_t i = 0; i < ep.support_items.size(); ++i) {
    const int item = ep.support_items[i];
    EXPECT_EQ(d.labels[static_cast<std::size_t>(item)], ep.classes[static_cast<std::size_t>(ep.support_labels[i])]);
    EXPECT_EQ(ep.support.row(static_cast<Eigen::Index>(i)), d.inputs.row(item));
  }
  std::vector<int> per(5, 0);
  for (int l : ep.query_labels) ++per[static_cast<std::size_t>(l)];
  for (int c : per) EXPECT_EQ(c, 15);
  // Same stream, same episode.
  const Episode again = sample_episode(d, 5, 5, 15, RngStream(1, 2));
  EXPECT_EQ(again.query_items, ep.query_items);
  EXPECT_NE(sample_episode(d, 5, 5, 15, RngStream(1, 3)).query_items, ep.query_items);
}

TEST(Episodes, ProtocolErrors) {
  const Dataset d = toy(4, 10);
  try {
    sample_episode(d, 5, 1, 1, RngStream(1, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::protocol);
  }
  try {
    sample_episode(d, 3, 5, 15, RngStream(1, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::protocol);
  }
}

TEST(Episodes, Accuracy) {
  const std::vector<int> p = {0, 1, 2, 2}, t = {0, 1, 1, 2};
  EXPECT_EQ(accuracy(p, t), 0.75);
  const std::vector<int> short_t = {0};
  EXPECT_THROW(accuracy(p, short_t), Error);
}

TEST(Episodes, ReportJsonRoundTripAndCsv) {
  EvalReport r;
  r.config = {{"a", "1"}, {"b", "x"}};
  r.config_hash = "00ff";
  r.seed = 9;
  r.per_episode = {{0, 0.5, {}}, {1, 1.0, {"lp_fallback: knn"}}};
  r.finalize();
  const std::string json = r.to_json();
  EXPECT_LT(json.find("\"config\""), json.find("\"config_hash\""));
  EXPECT_LT(json.find("\"per_episode\""), json.find("\"mean\""));
  const EvalReport back = EvalReport::from_json(json);
  EXPECT_EQ(back.to_json(), json);
  EXPECT_EQ(back.per_episode[1].flags.at(0), "lp_fallback: knn");
  EXPECT_EQ(EvalReport::csv_header(), "config_hash,seed,episodes,mean,ci95,fallbacks");
  EXPECT_EQ(r.csv_row().substr(0, 9), "00ff,9,2,");
  EXPECT_EQ(r.csv_row().back(), '1');
}

TEST(Io, Fte1RoundTripFlatAndImage) {
  const fs::path dir = scratch("fte1");
  Dataset flat = toy(3, 4);
  save_dataset(flat, (dir / "flat.fte1").string());
  const Dataset f2 = load_dataset((dir / "flat.fte1").string());
  EXPECT_EQ(f2.labels, flat.labels);
  EXPECT_EQ(f2.inputs, flat.inputs);  // values are exactly representable in f32
  EXPECT_FALSE(f2.is_image());

  Dataset img;
  img.channels = 2;
  img.height = 3;
  img.width = 2;
  img.inputs = Matrix::Constant(2, 12, 0.5);
  img.labels = {0, 1};
  save_dataset(img, (dir / "img.fte1").string());
  const Dataset i2 = load_dataset((dir / "img.fte1").string());
  EXPECT_TRUE(i2.is_image());
  EXPECT_EQ(i2.height, 3);
  EXPECT_EQ(i2.inputs, img.inputs);
}

TEST(Io, Fte1Errors) {
  const fs::path dir = scratch("fte1_bad");
  auto expect_data_error = [](const fs::path& p, const std::string& fragment) {
    try {
      load_dataset(p.string());
      FAIL() << p;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::data);
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  auto u32 = [](std::uint32_t v) { return std::string(reinterpret_cast<const char*>(&v), 4); };
  write_bytes(dir / "magic.fte1", "NOPE" + u32(1));
  expect_data_error(dir / "magic.fte1", "byte offset");
  write_bytes(dir / "empty.fte1", "FTE1" + u32(1) + u32(0) + u32(2) + u32(0) + u32(0));
  expect_data_error(dir / "empty.fte1", "count = 0");
  float val = 1.0f;
  const std::string f(reinterpret_cast<const char*>(&val), 4);
  write_bytes(dir / "labels.fte1", "FTE1" + u32(1) + u32(2) + u32(1) + u32(0) + u32(0) + f + f + u32(0));
  expect_data_error(dir / "labels.fte1", "label/count mismatch");
  expect_data_error(dir / "missing.fte1", "cannot open");
}

TEST(Io, PpmManifest) {
  const fs::path dir = scratch("ppm");
  Image a(3, 2, 2, 0.0), b(3, 2, 2, 1.0);
  a.at(0, 0, 1) = 1.0;
  write_ppm(a, (dir / "a.ppm").string());
  write_ppm(b, (dir / "b.ppm").string());
  EXPECT_EQ(read_ppm((dir / "a.ppm").string()), a);
  std::ofstream(dir / "list.csv") << "relative_path,label\na.ppm,3\nb.ppm,5\n";
  const Dataset d = load_dataset((dir / "list.csv").string());
  EXPECT_EQ(d.labels, (std::vector<int>{3, 5}));
  EXPECT_EQ(d.channels, 3);
  EXPECT_EQ(d.inputs.row(0), a.to_row());
  std::ofstream(dir / "bad.csv") << "a.ppm\n";
  EXPECT_THROW(load_dataset((dir / "bad.csv").string()), Error);
}

TEST(Io, NetworkAndEnsembleCheckpoints) {
  const fs::path dir = scratch("ckpt");
  RngStream rng(1, 1);
  EnsembleModel m;
  m.backbone = BackboneConfig::image_mode(2, 4, 4, {3}, {5}, 4);
  m.num_classes = 3;
  for (int i = 0; i < 2; ++i) {
    Branch br;
    br.index = i;
    br.projection = make_projection(4, rng.split(static_cast<std::uint64_t>(i)));
    RngStream init = rng.split(5 + static_cast<std::uint64_t>(i));
    br.params = init_params(m.backbone, 3, 3, init);
    m.branches.push_back(br);
  }
  save_ensemble(m, (dir / "m.ftee").string());
  const EnsembleModel back = load_ensemble((dir / "m.ftee").string());
  EXPECT_EQ(back.backbone, m.backbone);
  ASSERT_EQ(back.branches.size(), 2u);
  EXPECT_EQ(back.branches[1].projection.matrix, m.branches[1].projection.matrix);
  EXPECT_EQ(back.branches[1].projection.seed, m.branches[1].projection.seed);
  zip_params([](bool, const auto& x, const auto& y) { EXPECT_EQ(x, y); }, back.branches[0].params, m.branches[0].params);

  save_network(m.branches[0].params, m.backbone, (dir / "n.ftem").string());
  BackboneConfig cfg;
  const NetParams p = load_network((dir / "n.ftem").string(), cfg);
  EXPECT_EQ(cfg, m.backbone);
  EXPECT_EQ(p.head.weight, m.branches[0].params.head.weight);

  // Truncated file.
  const std::string full = read_text((dir / "m.ftee").string());
  write_bytes(dir / "short.ftee", full.substr(0, full.size() / 2));
  EXPECT_THROW(load_ensemble((dir / "short.ftee").string()), Error);
}

TEST(Config, DefaultsAndParsing) {
  const ExperimentConfig d = parse_config("");
  EXPECT_TRUE(d.bsr);
  EXPECT_FALSE(d.lp);
  EXPECT_EQ(d.lambda, 0.001);
  EXPECT_EQ(d.branch_count(), 1);
  const ExperimentConfig c = parse_config(
      "# comment\npreset = BSR+LP+ENT\nensemble = true\nM = 4 # trailing\nlp_gamma2 = 2.5\nhidden = 16,8\nlambda=0\n");
  EXPECT_TRUE(c.lp && c.ent && c.bsr && !c.da);
  EXPECT_EQ(c.branch_count(), 4);
  EXPECT_EQ(*c.lp_config.gamma2, 2.5);
  EXPECT_EQ(c.hidden, (std::vector<int>{16, 8}));
  EXPECT_EQ(c.effective_lambda(), 0.0);
  EXPECT_EQ(c.effective_beta(), 0.1);
  // Explicit keys override the preset whatever the line order.
  EXPECT_FALSE(parse_config("lp = false\npreset = BSR+LP\n").lp);
  const ExperimentConfig p = parse_config("protocol = full\nepisodes = 20\n");
  EXPECT_EQ(p.pretrain_epochs, 400);
  EXPECT_EQ(p.episodes, 20);
}

TEST(Config, Errors) {
  for (const char* bad : {"nope = 1", "lambda = abc", "M = 0", "K = 5\nK = 6", "lp_alpha = 1.0", "preset = XYZ", "novalue",
                          "aug_mode = S+Q", "bsr = maybe", "dataset_format = png", "momentum = 1"}) {
    try {
      parse_config(bad);
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::config) << bad;
    }
  }
}

TEST(Config, EchoRoundTripAndHash) {
  const ExperimentConfig c = parse_config("preset = BSR+LP\nlambda = 0.1\nlp_gamma2 = 0.3\nseed = 12345678901\n");
  const ExperimentConfig back = parse_config(format_config(c));
  EXPECT_EQ(back.echo(), c.echo());
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(c.hash().size(), 16u);
  EXPECT_NE(parse_config("seed = 2").hash(), parse_config("seed = 3").hash());
  EXPECT_EQ(preset_names().size(), 6u);
}

TEST(Config, RelativePathsFollowConfigFile) {
  const fs::path dir = scratch("cfgpath");
  fs::create_directories(dir / "sub");
  std::ofstream(dir / "sub" / "x.cfg") << "source_path = ../data/s.fte1\ntarget_path = /abs/t.fte1\n";
  const ExperimentConfig c = load_config((dir / "sub" / "x.cfg").string());
  EXPECT_EQ(fs::path(c.source_path), (dir / "data" / "s.fte1").lexically_normal());
  EXPECT_EQ(c.target_path, "/abs/t.fte1");
}

TEST(Synthetic, ShapesDeterminismAndShift) {
  SyntheticSpec s;
  s.dim = 8;
  s.source_per_class = 10;
  s.target_per_class = 10;
  const SyntheticData a = generate_synthetic(s);
  const SyntheticData b = generate_synthetic(s);
  EXPECT_EQ(a.source.inputs, b.source.inputs);
  EXPECT_EQ(a.source.classes().size(), 8u);
  EXPECT_EQ(a.target.classes().size(), 5u);
  EXPECT_EQ(a.source.size(), 80u);
  EXPECT_EQ(a.target.size(), 50u);
  // The target domain is displaced by roughly `shift`.
  const Eigen::RowVectorXd ms = a.source.inputs.colwise().mean();
  const Eigen::RowVectorXd mt = a.target.inputs.colwise().mean();
  EXPECT_GT((mt - ms).norm(), 1.0);

  s.scramble_labels = true;
  const SyntheticData c = generate_synthetic(s);
  EXPECT_EQ(c.target.inputs, a.target.inputs);
  EXPECT_NE(c.target.labels, a.target.labels);
  for (const auto& [label, items] : c.target.class_index()) EXPECT_EQ(items.size(), 10u);

  SyntheticSpec img;
  img.kind = "images";
  img.image_size = 8;
  img.source_per_class = 3;
  img.target_per_class = 3;
  const SyntheticData d = generate_synthetic(img);
  EXPECT_TRUE(d.target.is_image());
  EXPECT_EQ(d.target.inputs.cols(), 3 * 8 * 8);
  EXPECT_GE(d.target.inputs.minCoeff(), 0.0);
  EXPECT_LE(d.target.inputs.maxCoeff(), 1.0);
}

TEST(Synthetic, SpecParsing) {
  const SyntheticSpec s = parse_synthetic_spec("kind = images\nimage_size = 12\nscramble_labels = true\n");
  EXPECT_EQ(s.kind, "images");
  EXPECT_EQ(s.image_size, 12);
  EXPECT_TRUE(s.scramble_labels);
  EXPECT_THROW(parse_synthetic_spec("colour = red"), Error);
  EXPECT_THROW(parse_synthetic_spec("kind = text"), Error);
}
