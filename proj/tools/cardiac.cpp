// cardiac: command-line front end for the analysis engine and the HTTP service.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>

#include "cardiac/dataset.hpp"
#include "cardiac/nifti.hpp"
#include "cardiac/overlay.hpp"
#include "cardiac/platform/http.hpp"

using namespace cardiac;
using Json = nlohmann::json;

namespace {

struct StageFailure : std::runtime_error {
  StageFailure(std::string stage, const std::string& what) : std::runtime_error(what), stage(std::move(stage)) {}
  std::string stage;
};

template <typename F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const PipelineError&) {
    throw;
  } catch (const StageFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw StageFailure(name, e.what());
  }
}

seg::LossConfig loss_from_name(const std::string& name) {
  seg::LossConfig lc;
  if (name == "ce")
    lc.kind = seg::LossKind::CrossEntropy;
  else if (name == "dice")
    lc.kind = seg::LossKind::Dice;
  else if (name == "focal")
    lc.kind = seg::LossKind::FocalDice;
  else
    lc.kind = seg::LossKind::DynamicFocalDice;
  return lc;
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  nifti::write_file(p, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void print_confusion(const char* title, const data::Confusion& c) {
  std::printf("%s (rows: truth, columns: predicted)\n%6s", title, "");
  for (int j = 0; j < clf::kNumDiagnoses; ++j) std::printf("%6s", std::string(clf::to_string(static_cast<clf::Diagnosis>(j))).c_str());
  std::printf("\n");
  for (int i = 0; i < clf::kNumDiagnoses; ++i) {
    std::printf("%6s", std::string(clf::to_string(static_cast<clf::Diagnosis>(i))).c_str());
    for (int j = 0; j < clf::kNumDiagnoses; ++j) std::printf("%6d", c[i][j]);
    std::printf("\n");
  }
  std::printf("accuracy %.4f\n", data::accuracy(c));
}

// ---------------------------------------------------------------- phantom-gen

struct PhantomGenOpts {
  int per_class = 10;
  std::uint64_t seed = 0;
  std::string out = "cohort";
  bool desk = false;
  double noise = -1;
};

int run_phantom_gen(const PhantomGenOpts& o) {
  auto base = o.desk ? phantom::desk_spec() : phantom::PhantomSpec{};
  if (!o.desk) base.center_jitter_px = 4.0;
  if (o.noise >= 0) base.noise = o.noise;
  const auto cases = stage("phantom", [&] { return phantom::generate_cohort(o.per_class, o.seed, base); });
  stage("write", [&] {
    phantom::write_cohort(o.out, cases);
    return 0;
  });
  std::printf("wrote %zu cases and manifest.csv to %s\n", cases.size(), o.out.c_str());
  return 0;
}

// ---------------------------------------------------------------- train-seg

struct TrainSegOpts {
  std::string train_dir, val_dir, out, report;
  std::string loss = "dynamic-focal";
  bool no_roi = false;
  int epochs = 50;
  int batch = 4;
  double lr = 5e-4;
  std::uint64_t seed = 0;
  int levels = 2, base = 8;
  int patch = 128, depth = 16, stride = 8;
};

int run_train_seg(const TrainSegOpts& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const seg::CropGeometry g{o.patch, o.depth, o.stride};
  const bool use_roi = !o.no_roi;
  const auto train_cases = stage("data", [&] { return data::load_cohort(o.train_dir); });
  std::vector<data::Case> val_cases;
  if (!o.val_dir.empty()) val_cases = stage("data", [&] { return data::load_cohort(o.val_dir); });

  const auto train_set = stage("roi", [&] { return data::training_crops(train_cases, g, use_roi); });
  const auto val_set = stage("roi", [&] { return data::training_crops(val_cases, g, use_roi); });

  seg::NetConfig nc;
  nc.levels = o.levels;
  nc.base_channels = o.base;
  seg::TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.lr0 = o.lr;
  tc.seed = o.seed;
  const auto lc = loss_from_name(o.loss);

  auto model = std::make_shared<SegmentationModel>(SegmentationModel{seg::UNet(nc, o.seed), {}, use_roi});
  std::printf("train-seg: loss=%s roi=%s crops=%zu val_crops=%zu params=%zu\n", o.loss.c_str(), use_roi ? "on" : "off",
              train_set.size(), val_set.size(), model->net.parameter_count());
  std::printf("%5s %10s %10s %8s %8s %8s\n", "epoch", "loss", "lr", "val_RV", "val_Myo", "val_LV");
  Json history = Json::array();
  stage("segmentation", [&] {
    seg::train(model->net, train_set, val_set, tc, lc, [&](const seg::EpochMetrics& m) {
      std::printf("%5d %10.5f %10.2e %8.4f %8.4f %8.4f\n", m.epoch, m.mean_loss, m.lr_last, m.val_dice[1], m.val_dice[2],
                  m.val_dice[3]);
      std::fflush(stdout);
      Json e = {{"epoch", m.epoch}, {"loss", m.mean_loss}, {"lr", m.lr_last}, {"weights", m.weights},
                {"train_dice", m.train_dice}};
      if (!val_set.empty()) e["val_dice"] = m.val_dice;
      history.push_back(e);
    });
    return 0;
  });

  model->checkpoint.config = nc;
  model->checkpoint.geometry = g;
  model->checkpoint.metadata_json = segmentation_metadata(use_roi, o.loss, o.epochs, o.seed);
  stage("write", [&] {
    seg::save_checkpoint_file(o.out, model->net, g, model->checkpoint.metadata_json);
    return 0;
  });

  Json report = {{"loss", o.loss}, {"roi", use_roi}, {"epochs", o.epochs}, {"seed", o.seed}, {"history", history}};
  std::printf("\n| config | roi | RV | Myo | LV | mean fg Dice | voxel acc |\n|---|---|---|---|---|---|---|\n");
  if (!val_cases.empty()) {
    const auto s = stage("evaluation", [&] { return data::score_segmentation(*model, val_cases); });
    std::printf("| %s | %s | %s | %s | %s | %s | %s |\n", o.loss.c_str(), use_roi ? "on" : "off", fmt(s.dice[1]).c_str(),
                fmt(s.dice[2]).c_str(), fmt(s.dice[3]).c_str(), fmt(s.mean_foreground()).c_str(),
                fmt(s.voxel_accuracy).c_str());
    report["val"] = {{"dice", s.dice}, {"mean_foreground", s.mean_foreground()}, {"voxel_accuracy", s.voxel_accuracy}};
  } else {
    std::printf("| %s | %s | - | - | - | - | - |\n", o.loss.c_str(), use_roi ? "on" : "off");
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report["seconds"] = secs;
  std::printf("total %.1f s\n", secs);
  if (!o.report.empty()) write_text(o.report, report.dump(2));
  return 0;
}

// ---------------------------------------------------------------- features / train-clf

struct FeatureSourceOpts {
  std::string source = "truth";
  std::string seg_model;
};

std::vector<features::FeatureRow> cohort_features(const std::vector<data::Case>& cases, const FeatureSourceOpts& o) {
  std::shared_ptr<SegmentationModel> model;
  if (o.source == "seg") {
    if (o.seg_model.empty()) throw StageFailure("features", "--source seg needs --seg-model");
    model = std::make_shared<SegmentationModel>(stage("models", [&] { return load_segmentation_model(o.seg_model); }));
  }
  std::vector<features::FeatureRow> rows;
  for (const auto& c : cases) {
    const auto f = stage("features", [&] { return model ? data::predicted_features(*model, c) : data::truth_features(c); });
    for (const auto& w : f.warnings) std::fprintf(stderr, "warning %s: %s\n", c.id.c_str(), w.c_str());
    rows.push_back({c.id, f.values, std::string(clf::to_string(c.label))});
  }
  return rows;
}

struct FeaturesOpts {
  std::string data_dir, out;
  FeatureSourceOpts src;
};

int run_features(const FeaturesOpts& o) {
  const auto cases = stage("data", [&] { return data::load_cohort(o.data_dir); });
  const auto csv = features::write_feature_csv(cohort_features(cases, o.src));
  if (o.out.empty())
    std::fputs(csv.c_str(), stdout);
  else
    stage("write", [&] {
      write_text(o.out, csv);
      return 0;
    });
  return 0;
}

struct TrainClfOpts {
  std::string data_dir, csv, out;
  FeatureSourceOpts src;
  int trees = 100;
  std::uint64_t seed = 0;
  double C = 1.0;
  std::string expert = "es";
};

int run_train_clf(const TrainClfOpts& o) {
  std::vector<features::FeatureRow> rows;
  if (!o.csv.empty()) {
    const auto bytes = stage("data", [&] { return nifti::read_file(o.csv); });
    rows = stage("data", [&] {
      return features::read_feature_csv(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    });
  } else {
    const auto cases = stage("data", [&] { return data::load_cohort(o.data_dir); });
    rows = cohort_features(cases, o.src);
  }
  clf::Matrix X;
  std::vector<clf::Diagnosis> y;
  for (const auto& r : rows) {
    if (!r.label) throw StageFailure("data", "row " + r.study_id + " has no label");
    X.emplace_back(r.values.begin(), r.values.end());
    y.push_back(stage("data", [&] { return clf::parse_diagnosis(*r.label); }));
  }
  clf::ForestParams fp;
  fp.n_trees = o.trees;
  fp.seed = o.seed;
  clf::SvmParams sp;
  sp.C = o.C;
  const auto expert = o.expert == "ed" ? clf::kAlternateExpertFeatures : std::array<int, 2>{13, 17};
  const auto bundle = stage("classifier", [&] { return clf::train_bundle(X, y, fp, sp, expert); });
  data::Confusion c{};
  for (std::size_t i = 0; i < X.size(); ++i)
    ++c[static_cast<int>(y[i])][static_cast<int>(clf::two_stage_predict(X[i], bundle).final_label)];
  print_confusion("training set, two-stage", c);
  stage("write", [&] {
    clf::save_bundle_file(o.out, bundle);
    return 0;
  });
  std::printf("wrote %s (%d trees, %zu support vectors)\n", o.out.c_str(), o.trees, bundle.svm.support_vectors.size());
  return 0;
}

// ---------------------------------------------------------------- analyze

struct AnalyzeOpts {
  std::string image, seg_model, clf_model, out, overlays;
  int ed = 0, es = -1;
};

Json report_json(const AnalysisResult& r) {
  Json probs = Json::object();
  for (int c = 0; c < clf::kNumDiagnoses; ++c)
    probs[std::string(clf::to_string(static_cast<clf::Diagnosis>(c)))] = r.diagnosis.probabilities[c];
  Json feats = Json::object();
  for (int i = 0; i < features::kNumFeatures; ++i) feats[std::string(features::feature_names()[i])] = r.features.values[i];
  Json stages = Json::object();
  for (const auto& t : r.timings) stages[t.stage] = t.ms;
  return {{"final_label", std::string(clf::to_string(r.diagnosis.final_label))},
          {"initial_label", std::string(clf::to_string(r.diagnosis.initial_label))},
          {"probabilities", probs},
          {"expert_used", r.diagnosis.expert_used},
          {"expert_decision", r.diagnosis.expert_decision},
          {"features", feats},
          {"feature_vector", r.features.values},
          {"warnings", r.features.warnings},
          {"explanation", r.explanation},
          {"ed_frame", r.ed_frame},
          {"es_frame", r.es_frame},
          {"lv_center", {r.plan.cx, r.plan.cy}},
          {"wall_time_ms", r.wall_ms},
          {"stage_ms", stages}};
}

int run_analyze(const AnalyzeOpts& o) {
  const auto image = stage("io", [&] { return nifti::read(nifti::read_file(o.image)); });
  auto seg = std::make_shared<SegmentationModel>(stage("models", [&] { return load_segmentation_model(o.seg_model); }));
  auto bundle = std::make_shared<const clf::ModelBundle>(stage("models", [&] { return clf::load_bundle_file(o.clf_model); }));
  Analyzer a(seg, bundle);
  StudyMeta meta;
  meta.ed_frame = o.ed;
  meta.es_frame = o.es;
  const auto r = a.analyze(image, meta);
  const auto j = report_json(r);
  if (o.out.empty())
    std::puts(j.dump(2).c_str());
  else
    stage("write", [&] {
      write_text(o.out, j.dump(2));
      return 0;
    });
  if (!o.overlays.empty())
    stage("write", [&] {
      std::filesystem::create_directories(o.overlays);
      for (int phase = 0; phase < 2; ++phase)
        for (int z = 0; z < image.nz(); ++z) {
          const auto png = overlay::render_png(image, phase == 0 ? r.ed_frame : r.es_frame,
                                               r.segmentation.extract_frame(phase), z);
          nifti::write_file(std::filesystem::path(o.overlays) / ((phase == 0 ? "ed_" : "es_") + std::to_string(z) + ".png"), png);
        }
      return 0;
    });
  std::fprintf(stderr, "label %s (initial %s) in %.0f ms\n", std::string(clf::to_string(r.diagnosis.final_label)).c_str(),
               std::string(clf::to_string(r.diagnosis.initial_label)).c_str(), r.wall_ms);
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalOpts {
  std::string data_dir, seg_model, clf_model, out;
};

int run_eval(const EvalOpts& o) {
  const auto cases = stage("data", [&] { return data::load_cohort(o.data_dir); });
  std::shared_ptr<SegmentationModel> seg;
  if (!o.seg_model.empty())
    seg = std::make_shared<SegmentationModel>(stage("models", [&] { return load_segmentation_model(o.seg_model); }));
  std::optional<clf::ModelBundle> bundle;
  if (!o.clf_model.empty()) bundle = stage("models", [&] { return clf::load_bundle_file(o.clf_model); });
  if (!seg && !bundle) throw StageFailure("models", "eval needs --seg-model and/or --clf-model");

  Json out = Json::object();
  if (seg) {
    const auto s = stage("segmentation", [&] { return data::score_segmentation(*seg, cases); });
    std::printf("segmentation Dice over %zu cases (ED+ES)\n%8s %8s %8s %8s %10s\n", cases.size(), "RV", "Myo", "LV", "mean",
                "voxel_acc");
    std::printf("%8.4f %8.4f %8.4f %8.4f %10.4f\n\n", s.dice[1], s.dice[2], s.dice[3], s.mean_foreground(), s.voxel_accuracy);
    out["dice"] = s.dice;
    out["mean_foreground_dice"] = s.mean_foreground();
  }
  if (bundle) {
    data::Confusion initial{}, final_{};
    for (const auto& c : cases) {
      const auto f = stage("features", [&] { return seg ? data::predicted_features(*seg, c) : data::truth_features(c); });
      const auto r = stage("classifier", [&] { return clf::two_stage_predict(f.values, *bundle); });
      ++initial[static_cast<int>(c.label)][static_cast<int>(r.initial_label)];
      ++final_[static_cast<int>(c.label)][static_cast<int>(r.final_label)];
    }
    print_confusion("initial stage (forest)", initial);
    std::printf("\n");
    print_confusion("two-stage (forest + expert SVM)", final_);
    out["initial_accuracy"] = data::accuracy(initial);
    out["final_accuracy"] = data::accuracy(final_);
    out["confusion_initial"] = initial;
    out["confusion_final"] = final_;
  }
  if (!o.out.empty())
    stage("write", [&] {
      write_text(o.out, out.dump(2));
      return 0;
    });
  return 0;
}

// ---------------------------------------------------------------- serve

struct ServeOpts {
  std::string host = "127.0.0.1";
  std::optional<int> port;
  std::string data_dir, seg_model, clf_model;
};

int run_serve(const ServeOpts& o) {
  auto cfg = platform::ServiceConfig::from_env();
  if (o.port) cfg.port = *o.port;
  if (!o.data_dir.empty()) cfg.data_dir = o.data_dir;
  if (!o.seg_model.empty()) cfg.seg_model = o.seg_model;
  if (!o.clf_model.empty()) cfg.clf_model = o.clf_model;
  auto service = stage("startup", [&] { return std::make_unique<platform::Service>(cfg); });
  platform::HttpApi api(*service);
  stage("startup", [&] {
    api.listen(o.host, cfg.port, [](int port) {
      std::printf("listening on port %d\n", port);
      std::fflush(stdout);
    });
    return 0;
  });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cardiac cine-MRI analysis: phantoms, training, analysis and the HTTP service"};
  app.require_subcommand(1);

  PhantomGenOpts pg;
  auto* c_pg = app.add_subcommand("phantom-gen", "Generate a synthetic phantom cohort");
  c_pg->add_option("--per-class", pg.per_class, "Cases per diagnosis")->check(CLI::PositiveNumber);
  c_pg->add_option("--seed", pg.seed);
  c_pg->add_option("--out", pg.out, "Output directory");
  c_pg->add_flag("--desk", pg.desk, "64x64x8 grid at 3.125 mm (fast training)");
  c_pg->add_option("--noise", pg.noise, "Gaussian noise sigma (fraction of range)");

  TrainSegOpts ts;
  auto* c_ts = app.add_subcommand("train-seg", "Train the segmentation network");
  c_ts->add_option("--train", ts.train_dir, "Training cohort directory")->required();
  c_ts->add_option("--val", ts.val_dir, "Held-out cohort directory");
  c_ts->add_option("--out", ts.out, "Checkpoint path")->required();
  c_ts->add_option("--report", ts.report, "JSON report path");
  c_ts->add_option("--loss", ts.loss)->check(CLI::IsMember({"ce", "dice", "focal", "dynamic-focal"}));
  c_ts->add_flag("--no-roi", ts.no_roi, "Centre crops on the image instead of the detected LV");
  c_ts->add_option("--epochs", ts.epochs)->check(CLI::PositiveNumber);
  c_ts->add_option("--batch", ts.batch)->check(CLI::PositiveNumber);
  c_ts->add_option("--lr", ts.lr)->check(CLI::PositiveNumber);
  c_ts->add_option("--seed", ts.seed);
  c_ts->add_option("--levels", ts.levels)->check(CLI::Range(1, 5));
  c_ts->add_option("--base", ts.base)->check(CLI::PositiveNumber);
  c_ts->add_option("--patch", ts.patch)->check(CLI::PositiveNumber);
  c_ts->add_option("--depth", ts.depth)->check(CLI::PositiveNumber);
  c_ts->add_option("--stride", ts.stride)->check(CLI::PositiveNumber);

  TrainClfOpts tcf;
  auto* c_tc = app.add_subcommand("train-clf", "Train the two-stage classifier bundle");
  auto* tc_data = c_tc->add_option("--data", tcf.data_dir, "Cohort directory");
  c_tc->add_option("--csv", tcf.csv, "Labelled feature CSV instead of a cohort")->excludes(tc_data);
  c_tc->add_option("--out", tcf.out, "Bundle path")->required();
  c_tc->add_option("--source", tcf.src.source, "Feature source")->check(CLI::IsMember({"truth", "seg"}));
  c_tc->add_option("--seg-model", tcf.src.seg_model);
  c_tc->add_option("--trees", tcf.trees)->check(CLI::PositiveNumber);
  c_tc->add_option("--seed", tcf.seed);
  c_tc->add_option("--C", tcf.C)->check(CLI::PositiveNumber);
  c_tc->add_option("--expert", tcf.expert, "Expert feature pair")->check(CLI::IsMember({"es", "ed"}));

  AnalyzeOpts an;
  auto* c_an = app.add_subcommand("analyze", "Run the full pipeline on one NIfTI study");
  c_an->add_option("image", an.image, "4D NIfTI file")->required();
  c_an->add_option("--seg-model", an.seg_model)->required();
  c_an->add_option("--clf-model", an.clf_model)->required();
  c_an->add_option("--ed", an.ed, "ED frame index");
  c_an->add_option("--es", an.es, "ES frame index (-1: smallest segmented LV)");
  c_an->add_option("--out", an.out, "Report JSON path (default stdout)");
  c_an->add_option("--overlays", an.overlays, "Directory for per-slice overlay PNGs");

  FeaturesOpts fo;
  auto* c_fe = app.add_subcommand("features", "Emit the 20-feature CSV for a cohort");
  c_fe->add_option("--data", fo.data_dir)->required();
  c_fe->add_option("--out", fo.out, "CSV path (default stdout)");
  c_fe->add_option("--source", fo.src.source)->check(CLI::IsMember({"truth", "seg"}));
  c_fe->add_option("--seg-model", fo.src.seg_model);

  EvalOpts ev;
  auto* c_ev = app.add_subcommand("eval", "Per-class Dice and confusion matrices on a cohort");
  c_ev->add_option("--data", ev.data_dir)->required();
  c_ev->add_option("--seg-model", ev.seg_model);
  c_ev->add_option("--clf-model", ev.clf_model);
  c_ev->add_option("--out", ev.out, "JSON summary path");

  ServeOpts sv;
  auto* c_sv = app.add_subcommand("serve", "Run the HTTP service");
  c_sv->add_option("--host", sv.host);
  c_sv->add_option("--port", sv.port);
  c_sv->add_option("--data-dir", sv.data_dir);
  c_sv->add_option("--seg-model", sv.seg_model);
  c_sv->add_option("--clf-model", sv.clf_model);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*c_pg) return run_phantom_gen(pg);
    if (*c_ts) return run_train_seg(ts);
    if (*c_tc) {
      if (tcf.data_dir.empty() && tcf.csv.empty()) {
        std::fprintf(stderr, "train-clf: one of --data or --csv is required\n");
        return 2;
      }
      return run_train_clf(tcf);
    }
    if (*c_an) return run_analyze(an);
    if (*c_fe) return run_features(fo);
    if (*c_ev) return run_eval(ev);
    if (*c_sv) return run_serve(sv);
  } catch (const PipelineError& e) {
    std::fprintf(stderr, "error [%s]: %s\n", e.stage().c_str(), e.what());
    return 1;
  } catch (const StageFailure& e) {
    std::fprintf(stderr, "error [%s]: %s\n", e.stage.c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error [internal]: %s\n", e.what());
    return 1;
  }
  return 2;
}
