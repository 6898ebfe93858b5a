// Command-line front end: synth / train / eval / predict / report.
// Exit codes: 0 success, 2 configuration error, 3 I/O error.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dsin/data.hpp"
#include "dsin/evaluation.hpp"
#include "dsin/model.hpp"
#include "dsin/plot.hpp"
#include "dsin/structure_inference.hpp"
#include "dsin/synthetic.hpp"
#include "dsin/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve_out(std::string out, const std::string& command) {
  if (out.empty()) {
    const char* root = std::getenv("DSIN_OUT_ROOT");
    if (!root || !*root)
      throw dsin::config_error(
          "no --out given and DSIN_OUT_ROOT is not set");
    out = (fs::path(root) / command).string();
  }
  std::error_code ec;
  fs::create_directories(out, ec);
  std::ofstream probe(fs::path(out) / ".write_probe", std::ios::binary);
  if (!probe) throw dsin::io_error("output directory not writable: " + out);
  probe.close();
  fs::remove(fs::path(out) / ".write_probe", ec);
  return out;
}

void write_resolved_config(CLI::App* sub, const fs::path& dir) {
  std::ofstream os(dir / "resolved.cfg", std::ios::binary);
  if (!os) throw dsin::io_error("cannot write resolved.cfg in " + dir.string());
  os << sub->config_to_str(true, false);
}

std::vector<double> parse_double_list(const std::string& s, int expect,
                                      const std::string& what) {
  std::vector<double> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(std::stod(item));
  if (static_cast<int>(out.size()) == 1 && expect > 1)
    out.assign(expect, out[0]);
  if (static_cast<int>(out.size()) != expect)
    throw dsin::config_error(what + " needs " + std::to_string(expect) +
                             " comma-separated values, got " +
                             std::to_string(out.size()));
  return out;
}

std::vector<int> parse_stage_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(std::stoi(item));
  return out;
}

struct Splits {
  dsin::Dataset train, val, test;
};

// Fold `fold` is held out as the test split, the next fold is validation,
// the remaining folds train.
Splits split_dataset(const dsin::Dataset& ds, int k, int fold,
                     std::uint64_t seed) {
  if (fold < 0 || fold >= k)
    throw dsin::config_error("--fold must lie in [0," + std::to_string(k) +
                             ")");
  auto folds = dsin::make_folds(ds, k, seed);
  Splits sp;
  sp.test = dsin::subset(ds, folds[fold]);
  sp.val = dsin::subset(ds, folds[(fold + 1) % k]);
  std::vector<std::size_t> rest;
  for (int i = 0; i < k; ++i)
    if (i != fold && i != (fold + 1) % k)
      rest.insert(rest.end(), folds[i].begin(), folds[i].end());
  sp.train = dsin::subset(ds, rest);
  return sp;
}

dsin::ModelConfig model_config_from(const dsin::Dataset& ds,
                                    const dsin::TrainConfig& cfg) {
  dsin::ModelConfig mc;
  mc.n_labels = ds.n_labels;
  mc.streams = ds.streams;
  mc.fusion_hidden = cfg.fusion_hidden;
  mc.T = cfg.T;
  mc.si.correction_factors = cfg.correction_factors;
  mc.si.include_self = cfg.include_self;
  return mc;
}

void check_compatible(const dsin::CheckpointMeta& meta,
                      const dsin::Dataset& ds) {
  if (meta.model.n_labels != ds.n_labels)
    throw dsin::config_error(
        "checkpoint was trained for N=" +
        std::to_string(meta.model.n_labels) + ", dataset declares N=" +
        std::to_string(ds.n_labels));
  if (meta.model.streams != ds.streams)
    throw dsin::config_error(
        "checkpoint stream geometry does not match the dataset");
}

struct HeadScores {
  std::vector<std::string> names;   // patch_s0.., fusion, si
  std::vector<dsin::Tensor> scores; // each [M, N]
  dsin::Tensor labels;              // [M, N]
  dsin::SITrace trace;              // last batch only unless tracing
};

HeadScores compute_heads(dsin::DsinModel& model, const dsin::Dataset& ds,
                         int batch, int T, bool keep_trace = false) {
  dsin::NoGradGuard ng;
  const int M = static_cast<int>(ds.size());
  const int N = ds.n_labels;
  const int P = model.n_streams();
  HeadScores out;
  for (int i = 0; i < P; ++i) out.names.push_back("patch_s" + std::to_string(i));
  out.names.push_back("fusion");
  out.names.push_back("si");
  for (std::size_t h = 0; h < out.names.size(); ++h)
    out.scores.push_back(dsin::Tensor::zeros({M, N}));
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  out.labels = dsin::make_label_batch(ds, idx);
  for (std::size_t start = 0; start < idx.size();
       start += static_cast<std::size_t>(batch)) {
    std::vector<std::size_t> chunk(
        idx.begin() + start,
        idx.begin() +
            std::min(idx.size(), start + static_cast<std::size_t>(batch)));
    std::vector<dsin::Tensor> xs;
    for (int i = 0; i < P; ++i)
      xs.push_back(dsin::make_stream_batch(ds, chunk, i));
    dsin::DsinModel::Heads h = model.forward(xs, dsin::BnMode::infer, false, T);
    auto copy_rows = [&](const dsin::Tensor& src, dsin::Tensor& dst) {
      for (std::size_t r = 0; r < chunk.size(); ++r)
        std::copy(src.values().begin() + r * N,
                  src.values().begin() + (r + 1) * N,
                  dst.values().begin() + (start + r) * N);
    };
    for (int i = 0; i < P; ++i) copy_rows(h.p[i], out.scores[i]);
    copy_rows(h.f, out.scores[P]);
    copy_rows(h.yhat, out.scores[P + 1]);
    if (keep_trace && start == 0) out.trace = h.trace;
  }
  return out;
}

json report_to_json(const dsin::EvalReport& rep) {
  json j;
  j["macro_f1"] = rep.macro_f1;
  j["per_class"] = json::array();
  for (std::size_t c = 0; c < rep.per_class.size(); ++c) {
    const auto& pc = rep.per_class[c];
    j["per_class"].push_back({{"class", c},
                              {"tau", pc.tau},
                              {"tp", pc.tp},
                              {"fp", pc.fp},
                              {"fn", pc.fn},
                              {"tn", pc.tn},
                              {"precision", pc.precision},
                              {"recall", pc.recall},
                              {"f1", pc.f1},
                              {"degenerate", pc.degenerate}});
  }
  return j;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int n_labels = 0;
  std::string rho = "0.5";
  std::vector<std::string> corr;
  std::string contrast;
  double noise = 0.25;
  int subjects = 6;
  int samples_per_subject = 100;
  int image_size = 48;
  int patch_size = 16;
  bool include_face = false;
  bool split_evidence = false;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a, CLI::App* sub) {
  dsin::SyntheticSpec spec;
  spec.n_labels = a.n_labels;
  spec.target_rho = parse_double_list(a.rho, a.n_labels, "--rho");
  spec.correlations.assign(static_cast<std::size_t>(a.n_labels) * a.n_labels,
                           0.0);
  for (int i = 0; i < a.n_labels; ++i)
    spec.correlations[static_cast<std::size_t>(i) * a.n_labels + i] = 1.0;
  for (const std::string& c : a.corr) {
    int i, j;
    double v;
    char sep1, sep2;
    std::istringstream is(c);
    if (!(is >> i >> sep1 >> j >> sep2 >> v) || sep1 != ':' || sep2 != ':')
      throw dsin::config_error("--corr expects i:j:value, got '" + c + "'");
    if (i < 0 || j < 0 || i >= a.n_labels || j >= a.n_labels || i == j)
      throw dsin::config_error("--corr indices out of range in '" + c + "'");
    spec.correlations[static_cast<std::size_t>(i) * a.n_labels + j] = v;
    spec.correlations[static_cast<std::size_t>(j) * a.n_labels + i] = v;
  }
  if (!a.contrast.empty())
    spec.glyph_contrast =
        parse_double_list(a.contrast, a.n_labels, "--contrast");
  spec.glyph_noise = a.noise;
  spec.subjects = a.subjects;
  spec.samples_per_subject = a.samples_per_subject;
  spec.image_size = a.image_size;
  spec.patch_size = a.patch_size;
  spec.include_face = a.include_face;
  spec.split_evidence = a.split_evidence;
  spec.seed = a.seed;

  const fs::path out = resolve_out(a.out, "synth");
  dsin::Dataset ds = dsin::generate_synthetic_dataset(spec);
  dsin::save_manifest(ds, out);
  write_resolved_config(sub, out);
  std::cout << "wrote " << ds.size() << " samples, " << ds.n_streams()
            << " streams, N=" << ds.n_labels << " to " << out.string()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, out, resume;
  std::string stages = "1,2,3,4,5";
  dsin::TrainConfig cfg;
  int k = 3, fold = 0;
  bool no_balancing = false, no_correction_factors = false,
       no_self_messages = false;
};

int cmd_train(TrainArgs& a, CLI::App* sub) {
  a.cfg.stages = parse_stage_list(a.stages);
  a.cfg.balancing = !a.no_balancing;
  a.cfg.correction_factors = !a.no_correction_factors;
  a.cfg.include_self = !a.no_self_messages;
  dsin::validate(a.cfg);
  if (a.k < 3)
    throw dsin::config_error("training needs --k >= 3 folds (train/val/test)");

  dsin::Dataset ds = dsin::load_manifest(a.data);
  if (ds.size() == 0) throw dsin::config_error("dataset is empty");
  Splits sp = split_dataset(ds, a.k, a.fold, a.cfg.seed);
  const fs::path out = resolve_out(a.out, "train");

  dsin::DsinModel model;
  if (!a.resume.empty()) {
    dsin::LoadedCheckpoint lc = dsin::load_checkpoint(a.resume);
    check_compatible(lc.meta, ds);
    model = std::move(lc.model);
  } else {
    model = dsin::DsinModel(model_config_from(ds, a.cfg), a.cfg.seed);
  }

  dsin::TrainRunResult res = dsin::staged_train(model, sp.train, sp.val, a.cfg);

  dsin::CheckpointMeta meta;
  meta.stage = res.last_stage;
  meta.config_hash = dsin::fnv1a64(a.cfg.canonical());
  meta.model = model.config();
  dsin::save_checkpoint(model, res.adam, meta, out / "checkpoint.ckpt");
  dsin::write_history(res.history, out);
  write_resolved_config(sub, out);
  std::cout << "trained stages " << a.stages << " on " << sp.train.size()
            << " samples; checkpoint at "
            << (out / "checkpoint.ckpt").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string data, checkpoint, out;
  int k = 3, fold = 0;
  std::uint64_t seed = 0;
  int batch = 64;
  int T = -1;  // -1: use the checkpoint's T
  bool tune = false;
};

int cmd_eval(const EvalArgs& a, CLI::App* sub) {
  dsin::Dataset ds = dsin::load_manifest(a.data);
  if (ds.size() == 0) throw dsin::config_error("dataset is empty");
  dsin::LoadedCheckpoint lc = dsin::load_checkpoint(a.checkpoint);
  check_compatible(lc.meta, ds);
  const int T = a.T >= 0 ? a.T : lc.meta.model.T;
  Splits sp = split_dataset(ds, a.k, a.fold, a.seed);
  const fs::path out = resolve_out(a.out, "eval");
  const int N = ds.n_labels;

  HeadScores val = compute_heads(lc.model, sp.val, a.batch, T);
  HeadScores test = compute_heads(lc.model, sp.test, a.batch, T);

  json j;
  j["n_labels"] = N;
  j["T"] = T;
  auto run_split = [&](const std::string& split_name, HeadScores& hs,
                       HeadScores& tune_source) {
    std::ofstream os(out / ("report_" + split_name + ".tsv"),
                     std::ios::binary);
    os << "head\tclass\ttau\ttp\tfp\tfn\ttn\tprecision\trecall\tf1\t"
          "degenerate\n";
    os.precision(6);
    for (std::size_t h = 0; h < hs.names.size(); ++h) {
      auto emit = [&](const std::string& head_name,
                      const std::vector<double>& taus) {
        dsin::EvalReport rep = dsin::f1_frame(hs.scores[h], hs.labels, taus);
        for (int c = 0; c < N; ++c) {
          const auto& pc = rep.per_class[c];
          os << head_name << '\t' << c << '\t' << pc.tau << '\t' << pc.tp
             << '\t' << pc.fp << '\t' << pc.fn << '\t' << pc.tn << '\t'
             << pc.precision << '\t' << pc.recall << '\t' << pc.f1 << '\t'
             << (pc.degenerate ? 1 : 0) << '\n';
        }
        os << head_name << "\tmacro\t-\t-\t-\t-\t-\t-\t-\t" << rep.macro_f1
           << "\t-\n";
        j["splits"][split_name][head_name] = report_to_json(rep);
      };
      emit(hs.names[h], std::vector<double>(N, 0.5));
      if (a.tune) {
        auto taus =
            dsin::tune_thresholds(tune_source.scores[h], tune_source.labels);
        emit(hs.names[h] + "_tt", taus);
      }
    }
  };
  run_split("val", val, val);
  run_split("test", test, val);  // thresholds tuned on validation only

  // dataset-level statistics over the full manifest
  std::vector<std::size_t> all_idx(ds.size());
  std::iota(all_idx.begin(), all_idx.end(), 0);
  dsin::Tensor all_labels = dsin::make_label_batch(ds, all_idx);
  auto [card, dens] = dsin::label_stats(all_labels);
  auto corr = dsin::au_correlation_matrix(all_labels);
  j["label_cardinality"] = card;
  j["label_density"] = dens;
  j["correlation"] = corr;
  dsin::write_correlation_tsv(corr, N, out / "correlation.tsv");

  // threshold sweep plot data on the validation split (fusion and SI heads)
  const auto grid = dsin::default_threshold_grid();
  const int P = lc.model.n_streams();
  dsin::write_tau_sweep_tsv(val.scores[P], val.labels, grid,
                            out / "tau_sweep_fusion.tsv");
  dsin::write_tau_sweep_tsv(val.scores[P + 1], val.labels, grid,
                            out / "tau_sweep_si.tsv");

  std::ofstream js(out / "report.json", std::ios::binary);
  js << j.dump(2) << '\n';
  js.close();
  write_resolved_config(sub, out);
  std::cout << "evaluated " << sp.test.size() << " test samples; reports in "
            << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct PredictArgs {
  std::string data, checkpoint, out;
  std::string split = "all";  // all|test|val|train
  int k = 3, fold = 0;
  std::uint64_t seed = 0;
  int batch = 64;
  int T = -1;
  bool dump_trace = false;
  int trace_samples = 8;
};

int cmd_predict(const PredictArgs& a, CLI::App* sub) {
  dsin::Dataset ds = dsin::load_manifest(a.data);
  if (ds.size() == 0) throw dsin::config_error("dataset is empty");
  dsin::LoadedCheckpoint lc = dsin::load_checkpoint(a.checkpoint);
  check_compatible(lc.meta, ds);
  const int T = a.T >= 0 ? a.T : lc.meta.model.T;
  dsin::Dataset chosen;
  if (a.split == "all") {
    chosen = ds;
  } else {
    Splits sp = split_dataset(ds, a.k, a.fold, a.seed);
    if (a.split == "test") chosen = std::move(sp.test);
    else if (a.split == "val") chosen = std::move(sp.val);
    else if (a.split == "train") chosen = std::move(sp.train);
    else throw dsin::config_error("--split must be all|test|val|train");
  }
  const fs::path out = resolve_out(a.out, "predict");
  const int N = ds.n_labels, P = lc.model.n_streams();

  HeadScores hs = compute_heads(lc.model, chosen, a.batch, T, false);
  std::ofstream os(out / "predictions.tsv", std::ios::binary);
  os.precision(8);
  os << "id\tsubject\tlabels";
  for (int j = 0; j < N; ++j) os << "\tf" << j;
  for (int j = 0; j < N; ++j) os << "\tsi" << j;
  for (int i = 0; i < P; ++i)
    for (int j = 0; j < N; ++j) os << "\tp" << i << "_" << j;
  os << '\n';
  for (std::size_t r = 0; r < chosen.size(); ++r) {
    const dsin::Sample& s = chosen.samples[r];
    os << s.id << '\t' << s.subject << '\t' << dsin::labels_to_bits(s.labels);
    for (int j = 0; j < N; ++j)
      os << '\t' << hs.scores[P].values()[r * N + j];
    for (int j = 0; j < N; ++j)
      os << '\t' << hs.scores[P + 1].values()[r * N + j];
    for (int i = 0; i < P; ++i)
      for (int j = 0; j < N; ++j)
        os << '\t' << hs.scores[i].values()[r * N + j];
    os << '\n';
  }
  os.close();

  if (a.dump_trace) {
    const int K = std::min<int>(a.trace_samples, static_cast<int>(chosen.size()));
    std::vector<std::size_t> idx(K);
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<dsin::Tensor> xs;
    for (int i = 0; i < P; ++i)
      xs.push_back(dsin::make_stream_batch(chosen, idx, i));
    dsin::NoGradGuard ng;
    dsin::DsinModel::Heads h =
        lc.model.forward(xs, dsin::BnMode::infer, false, T);
    std::ofstream ts(out / "trace.tsv", std::ios::binary);
    ts.precision(8);
    ts << "id\tt";
    for (int j = 0; j < N; ++j) ts << "\tm" << j;
    for (int j = 0; j < N; ++j) ts << "\tchi" << j;
    for (int j = 0; j < N; ++j) ts << "\tyhat" << j;
    ts << '\n';
    for (int r = 0; r < K; ++r)
      for (std::size_t t = 0; t < h.trace.m.size(); ++t) {
        ts << chosen.samples[r].id << '\t' << (t + 1);
        for (int j = 0; j < N; ++j)
          ts << '\t' << h.trace.m[t].values()[static_cast<std::size_t>(r) * N + j];
        for (int j = 0; j < N; ++j)
          ts << '\t' << h.trace.chi[t].values()[static_cast<std::size_t>(r) * N + j];
        for (int j = 0; j < N; ++j)
          ts << '\t' << h.trace.yhat[t].values()[static_cast<std::size_t>(r) * N + j];
        ts << '\n';
      }
  }
  write_resolved_config(sub, out);
  std::cout << "predictions for " << chosen.size() << " samples in "
            << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// report: render plot-data files produced by train/eval/predict into SVG
// ---------------------------------------------------------------------------

std::vector<std::vector<std::string>> read_tsv(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw dsin::io_error("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, '\t')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

int cmd_report(const std::string& run_dir) {
  const fs::path dir(run_dir);
  if (!fs::is_directory(dir))
    throw dsin::io_error("not a directory: " + run_dir);
  int rendered = 0;

  if (fs::exists(dir / "correlation.tsv")) {
    auto rows = read_tsv(dir / "correlation.tsv");
    const int n = static_cast<int>(rows.size());
    std::vector<double> m;
    for (const auto& r : rows)
      for (const auto& c : r) m.push_back(std::stod(c));
    dsin::plot::heatmap(m, n, "label correlation", dir / "correlation.svg");
    ++rendered;
  }

  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("tau_sweep", 0) == 0 && entry.path().extension() == ".tsv") {
      auto rows = read_tsv(entry.path());
      std::vector<dsin::plot::Series> series(rows[0].size() - 1);
      for (std::size_t c = 1; c < rows[0].size(); ++c)
        series[c - 1].name = rows[0][c];
      for (std::size_t r = 1; r < rows.size(); ++r)
        for (std::size_t c = 1; c < rows[r].size(); ++c) {
          series[c - 1].x.push_back(std::stod(rows[r][0]));
          series[c - 1].y.push_back(std::stod(rows[r][c]));
        }
      fs::path svg = entry.path();
      svg.replace_extension(".svg");
      dsin::plot::line_chart(series, name, "tau", "F1", svg);
      ++rendered;
    }
    if (name.rfind("history_stage", 0) == 0 &&
        entry.path().extension() == ".tsv") {
      auto rows = read_tsv(entry.path());
      // columns: stage stream epoch train_loss val_loss ...
      std::map<int, dsin::plot::Series> train_s, val_s;
      for (std::size_t r = 1; r < rows.size(); ++r) {
        const int stream = std::stoi(rows[r][1]);
        const double epoch = std::stod(rows[r][2]);
        if (!train_s.count(stream)) {
          const std::string tag =
              stream >= 0 ? " s" + std::to_string(stream) : "";
          train_s[stream].name = "train" + tag;
          val_s[stream].name = "val" + tag;
        }
        train_s[stream].x.push_back(epoch);
        train_s[stream].y.push_back(std::stod(rows[r][3]));
        val_s[stream].x.push_back(epoch);
        val_s[stream].y.push_back(std::stod(rows[r][4]));
      }
      std::vector<dsin::plot::Series> series;
      for (auto& [k, s] : train_s) series.push_back(std::move(s));
      for (auto& [k, s] : val_s) series.push_back(std::move(s));
      fs::path svg = entry.path();
      svg.replace_extension(".svg");
      dsin::plot::line_chart(series, name, "epoch", "loss", svg);
      ++rendered;
    }
  }

  if (fs::exists(dir / "trace.tsv")) {
    auto rows = read_tsv(dir / "trace.tsv");
    const std::size_t cols = rows[0].size();
    const int n = static_cast<int>((cols - 2) / 3);
    // mean chi per class per step, averaged over samples
    std::map<int, std::pair<std::vector<double>, int>> acc;  // t -> (sum_j, count)
    std::map<int, std::map<int, double>> chi_sum;             // t -> j -> sum
    std::map<int, int> t_count;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const int t = std::stoi(rows[r][1]);
      for (int j = 0; j < n; ++j)
        chi_sum[t][j] += std::stod(rows[r][2 + n + j]);
      ++t_count[t];
    }
    std::vector<dsin::plot::Series> series(n + 1);
    series[0].name = "mean chi";
    for (int j = 0; j < n; ++j) series[j + 1].name = "chi" + std::to_string(j);
    for (auto& [t, per_class] : chi_sum) {
      double total = 0;
      for (int j = 0; j < n; ++j) {
        const double v = per_class[j] / t_count[t];
        series[j + 1].x.push_back(t);
        series[j + 1].y.push_back(v);
        total += v;
      }
      series[0].x.push_back(t);
      series[0].y.push_back(total / n);
    }
    dsin::plot::line_chart(series, "correction factors over iterations", "t",
                           "chi", dir / "trace_chi.svg");
    ++rendered;
  }

  std::cout << "rendered " << rendered << " plot(s) in " << run_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch-based multi-label recognition with recurrent gated "
               "structure inference"};
  app.require_subcommand(1);
  argv = app.ensure_utf8(argv);

  SynthArgs sa;
  CLI::App* synth = app.add_subcommand(
      "synth", "Generate a synthetic correlated-label dataset");
  synth->set_config("--config");
  synth->allow_config_extras(false);
  synth->add_option("--out", sa.out, "Output dataset directory");
  synth->add_option("--n-labels", sa.n_labels, "Number of binary labels N")
      ->required();
  synth->add_option("--rho", sa.rho,
                    "Target positive ratios (comma list or one value)");
  synth->add_option("--corr", sa.corr,
                    "Pairwise correlation i:j:value (repeatable)");
  synth->add_option("--contrast", sa.contrast,
                    "Per-label glyph contrast (comma list)");
  synth->add_option("--noise", sa.noise, "Pixel noise std");
  synth->add_option("--subjects", sa.subjects, "Subject count");
  synth->add_option("--samples-per-subject", sa.samples_per_subject,
                    "Samples per subject");
  synth->add_option("--image-size", sa.image_size, "Face canvas side");
  synth->add_option("--patch-size", sa.patch_size, "Patch side");
  synth->add_flag("--include-face", sa.include_face,
                  "Append the whole canvas as an extra stream");
  synth->add_flag("--split-evidence", sa.split_evidence,
                  "Split even-label glyphs across two patch slots");
  synth->add_option("--seed", sa.seed, "Generation seed");

  TrainArgs ta;
  CLI::App* train =
      app.add_subcommand("train", "Run the staged training procedure");
  train->set_config("--config");
  train->allow_config_extras(false);
  train->add_option("--data", ta.data, "Dataset manifest directory")
      ->required();
  train->add_option("--out", ta.out, "Output directory");
  train->add_option("--resume", ta.resume, "Checkpoint to resume from");
  train->add_option("--stages", ta.stages, "Training stages, e.g. 1,2,3,4,5");
  train->add_option("--w1", ta.cfg.w1, "Compound weight for the patch loss");
  train->add_option("--w2", ta.cfg.w2, "Compound weight for the fusion loss");
  train->add_option("--w3", ta.cfg.w3, "Compound weight for the SI loss");
  train->add_option("--r", ta.cfg.r, "Correction-factor regularizer");
  train->add_option("--T", ta.cfg.T, "Structure inference iterations");
  train->add_option("--lr", ta.cfg.lr, "Adam learning rate");
  train->add_option("--batch", ta.cfg.batch, "Mini-batch size");
  train->add_option("--epochs", ta.cfg.max_epochs, "Max epochs per stage");
  train->add_option("--patience", ta.cfg.patience, "Early stopping patience");
  train->add_option("--seed", ta.cfg.seed, "Run seed");
  train->add_option("--hidden", ta.cfg.fusion_hidden, "Fusion hidden width");
  train->add_option("--k", ta.k, "Fold count");
  train->add_option("--fold", ta.fold, "Held-out test fold index");
  train->add_flag("--no-balancing", ta.no_balancing,
                  "Disable class-balanced patch loss weights");
  train->add_flag("--freeze-conv", ta.cfg.freeze_conv,
                  "Train FC layers only (requires --resume)");
  train->add_flag("--no-correction-factors", ta.no_correction_factors,
                  "Disable message gating");
  train->add_flag("--no-self-messages", ta.no_self_messages,
                  "Exclude self-messages from SI aggregation");
  train->add_flag("--parallel-streams", ta.cfg.parallel_streams,
                  "Train stage-1 streams concurrently");

  EvalArgs ea;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Evaluate a checkpoint and write reports");
  eval_cmd->set_config("--config");
  eval_cmd->allow_config_extras(false);
  eval_cmd->add_option("--data", ea.data, "Dataset manifest directory")
      ->required();
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")
      ->required();
  eval_cmd->add_option("--out", ea.out, "Output directory");
  eval_cmd->add_option("--k", ea.k, "Fold count");
  eval_cmd->add_option("--fold", ea.fold, "Held-out test fold index");
  eval_cmd->add_option("--seed", ea.seed, "Fold split seed");
  eval_cmd->add_option("--batch", ea.batch, "Evaluation batch size");
  eval_cmd->add_option("--T", ea.T, "Override SI iteration count");
  eval_cmd->add_flag("--tune-thresholds", ea.tune,
                     "Tune per-class thresholds on the validation fold");

  PredictArgs pa;
  CLI::App* predict =
      app.add_subcommand("predict", "Write per-sample head outputs");
  predict->set_config("--config");
  predict->allow_config_extras(false);
  predict->add_option("--data", pa.data, "Dataset manifest directory")
      ->required();
  predict->add_option("--checkpoint", pa.checkpoint, "Checkpoint file")
      ->required();
  predict->add_option("--out", pa.out, "Output directory");
  predict->add_option("--split", pa.split, "all|test|val|train");
  predict->add_option("--k", pa.k, "Fold count");
  predict->add_option("--fold", pa.fold, "Held-out test fold index");
  predict->add_option("--seed", pa.seed, "Fold split seed");
  predict->add_option("--batch", pa.batch, "Batch size");
  predict->add_option("--T", pa.T, "Override SI iteration count");
  predict->add_flag("--dump-trace", pa.dump_trace,
                    "Write per-step SI state for the first samples");
  predict->add_option("--trace-samples", pa.trace_samples,
                      "Samples to include in the trace dump");

  std::string report_dir;
  CLI::App* report =
      app.add_subcommand("report", "Render plot data files to SVG images");
  report->add_option("--run", report_dir, "Run output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*synth) return cmd_synth(sa, synth);
    if (*train) return cmd_train(ta, train);
    if (*eval_cmd) return cmd_eval(ea, eval_cmd);
    if (*predict) return cmd_predict(pa, predict);
    if (*report) return cmd_report(report_dir);
  } catch (const dsin::io_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const dsin::error& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
