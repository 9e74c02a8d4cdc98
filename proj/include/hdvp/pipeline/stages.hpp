#pragma once

// Pipeline stages over a run directory. Each stage records a stamp holding a
// hash of the configuration it depends on, so `all` can skip stages whose
// inputs have not changed.

#include <cstdio>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "hdvp/dataset/dataset.hpp"
#include "hdvp/eval/interpolate.hpp"
#include "hdvp/eval/memory.hpp"
#include "hdvp/eval/report.hpp"
#include "hdvp/latent/codec.hpp"
#include "hdvp/pipeline/config.hpp"
#include "hdvp/predict/predictor.hpp"
#include "hdvp/recon/train.hpp"

namespace hdvp::pipeline {

enum class Stage { kSynth, kTrainRecon, kEncode, kTrainPred, kPredict, kEval, kInterp };

inline constexpr std::array<Stage, 7> kAllStages{Stage::kSynth,   Stage::kTrainRecon, Stage::kEncode, Stage::kTrainPred,
                                                 Stage::kPredict, Stage::kEval,       Stage::kInterp};

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::kSynth: return "synth";
    case Stage::kTrainRecon: return "train-recon";
    case Stage::kEncode: return "encode";
    case Stage::kTrainPred: return "train-pred";
    case Stage::kPredict: return "predict";
    case Stage::kEval: return "eval";
    case Stage::kInterp: return "interp";
  }
  return "?";
}

/// Fixed layout of a run directory.
struct RunPaths {
  fs::path root;

  fs::path data(bool test) const { return root / "data" / (test ? "test" : "train"); }
  fs::path data_manifest(bool test) const { return data(test) / "manifest.json"; }
  fs::path recon_dir() const { return root / "recon"; }
  fs::path recon_checkpoint() const { return recon_dir() / "model.ckpt"; }
  fs::path latents(bool test) const { return root / "latents" / (test ? "test" : "train"); }
  fs::path latent_manifest(bool test) const { return latents(test) / "manifest.json"; }
  fs::path predictor_dir() const { return root / "predictor"; }
  fs::path predictor_checkpoint() const { return predictor_dir() / "model.ckpt"; }
  fs::path predictions_dir() const { return root / "predictions"; }
  fs::path eval_dir() const { return root / "eval"; }
  fs::path interp_dir() const { return root / "interp"; }
  fs::path stamp(Stage s) const { return root / "stamps" / (std::string(to_string(s)) + ".json"); }

  /// Files whose presence means the stage has produced its output.
  std::vector<fs::path> outputs(Stage s) const {
    switch (s) {
      case Stage::kSynth: return {data_manifest(false), data_manifest(true)};
      case Stage::kTrainRecon: return {recon_checkpoint()};
      case Stage::kEncode: return {latent_manifest(false), latent_manifest(true)};
      case Stage::kTrainPred: return {predictor_checkpoint()};
      case Stage::kPredict: return {predictions_dir() / "predictions.json"};
      case Stage::kEval: return {eval_dir() / "report.json"};
      case Stage::kInterp: return {interp_dir() / "interp.json"};
    }
    return {};
  }
};

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Hash of everything a stage's output depends on, chained through upstream stages.
inline std::string stage_hash(const PipelineConfig& c, Stage s) {
  const auto doc = to_json_doc(c);
  switch (s) {
    case Stage::kSynth: return fnv1a_hex(nlohmann::json{{"seed", c.seed}, {"synth", doc.at("synth")}}.dump());
    case Stage::kTrainRecon: return fnv1a_hex(stage_hash(c, Stage::kSynth) + doc.at("recon").dump());
    case Stage::kEncode: return fnv1a_hex(stage_hash(c, Stage::kTrainRecon) + "encode");
    case Stage::kTrainPred: return fnv1a_hex(stage_hash(c, Stage::kEncode) + doc.at("predict").dump());
    case Stage::kPredict:
      return fnv1a_hex(stage_hash(c, Stage::kTrainPred) + "predict" + std::to_string(c.eval.predict_examples));
    case Stage::kEval: return fnv1a_hex(stage_hash(c, Stage::kTrainPred) + doc.at("eval").dump());
    case Stage::kInterp: return fnv1a_hex(stage_hash(c, Stage::kEncode) + "interp" + std::to_string(c.eval.interp_steps));
  }
  return {};
}

/// Stages whose outputs a stage reads, checkpoints first.
inline std::vector<Stage> prerequisites(Stage s) {
  switch (s) {
    case Stage::kSynth: return {};
    case Stage::kTrainRecon: return {Stage::kSynth};
    case Stage::kEncode: return {Stage::kTrainRecon, Stage::kSynth};
    case Stage::kTrainPred: return {Stage::kEncode};
    case Stage::kPredict: return {Stage::kTrainRecon, Stage::kTrainPred, Stage::kSynth};
    case Stage::kEval: return {Stage::kTrainRecon, Stage::kTrainPred, Stage::kSynth, Stage::kEncode};
    case Stage::kInterp: return {Stage::kTrainRecon, Stage::kSynth};
  }
  return {};
}

class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, fs::path root, std::ostream& log = std::cout) : cfg_(std::move(cfg)), paths_{std::move(root)}, log_(log) {}

  const RunPaths& paths() const { return paths_; }
  const PipelineConfig& config() const { return cfg_; }

  bool outputs_present(Stage s) const {
    for (const auto& p : paths_.outputs(s))
      if (!fs::exists(p)) return false;
    return true;
  }

  /// Recorded stamp hash, empty if none.
  std::string recorded_hash(Stage s) const {
    if (!fs::exists(paths_.stamp(s))) return {};
    try {
      return nlohmann::json::parse(io::read_text(paths_.stamp(s))).at("hash").get<std::string>();
    } catch (const std::exception&) {
      return {};
    }
  }

  bool up_to_date(Stage s) const { return outputs_present(s) && recorded_hash(s) == stage_hash(cfg_, s); }

  /// Run one stage after checking that its inputs exist.
  void run(Stage s) {
    for (Stage p : prerequisites(s)) {
      if (!outputs_present(p)) fail(ErrorKind::kIo, missing_message(p));
      if (recorded_hash(p) != stage_hash(cfg_, p))
        log_ << "warning: " << to_string(p) << " output is stale for the current config; rerun " << to_string(p)
             << " or use all\n";
    }
    log_ << "[" << to_string(s) << "] running\n";
    switch (s) {
      case Stage::kSynth: synth(); break;
      case Stage::kTrainRecon: train_recon(); break;
      case Stage::kEncode: encode(); break;
      case Stage::kTrainPred: train_pred(); break;
      case Stage::kPredict: predict_stage(); break;
      case Stage::kEval: eval_stage(); break;
      case Stage::kInterp: interp(); break;
    }
    io::write_text(paths_.stamp(s), nlohmann::json{{"stage", to_string(s)}, {"hash", stage_hash(cfg_, s)}}.dump(2) + "\n");
  }

  /// Every stage in order, skipping up-to-date ones unless forced. Returns the number run.
  int run_all(bool force) {
    int ran = 0;
    for (Stage s : kAllStages) {
      if (!force && up_to_date(s)) {
        log_ << "[" << to_string(s) << "] up to date, skipping\n";
        continue;
      }
      run(s);
      ++ran;
    }
    return ran;
  }

 private:
  std::string missing_message(Stage p) const {
    const auto outs = paths_.outputs(p);
    const bool checkpoint = p == Stage::kTrainRecon || p == Stage::kTrainPred;
    return std::string(checkpoint ? "missing checkpoint: " : "missing input: ") + outs.front().string() + " (run " + to_string(p) +
           " first)";
  }

  void reset_dir(const fs::path& d) {
    std::error_code ec;
    fs::remove_all(d, ec);
    fs::create_directories(d, ec);
    if (ec) fail(ErrorKind::kIo, "cannot create " + d.string() + ": " + ec.message());
  }

  std::vector<dataset::Video> load_videos(bool test) const {
    const auto m = dataset::read_manifest(paths_.data_manifest(test));
    std::vector<dataset::Video> out;
    for (int i = 0; i < m.video_count; ++i) out.push_back(dataset::read_video(m.video_path(static_cast<std::size_t>(i))));
    return out;
  }

  static Tensor<float> frame_of(const Tensor<float>& video, int t) {
    const int h = video.dim(1), w = video.dim(2);
    Tensor<float> f({h, w, 3});
    std::copy_n(video.data() + static_cast<std::int64_t>(t) * h * w * 3, f.numel(), f.data());
    return f;
  }

  void write_plot(const fs::path& p, const std::vector<std::vector<double>>& series) {
    io::write_netpbm(p, eval::plot_lines(series));
  }

  void synth() {
    const auto& sc = cfg_.synth;
    dataset::Corpora corpora;
    corpora.glyphs =
        sc.glyph_dir.empty() ? dataset::builtin_digit_glyphs(sc.spec.digit_size) : dataset::load_glyphs(sc.glyph_dir, sc.spec.digit_size);
    if (sc.spec.background_mode == dataset::BackgroundMode::kCorpusImage)
      corpora.backgrounds = dataset::load_backgrounds(sc.background_dir, sc.spec.frame_height, sc.spec.frame_width);
    for (bool test : {false, true}) {
      auto spec = sc.spec;
      spec.rng_seed = test ? cfg_.test_seed() : cfg_.seed;
      reset_dir(paths_.data(test));
      const auto m = dataset::build_dataset(spec, corpora, test ? sc.test_videos : sc.train_videos, paths_.data(test));
      log_ << "  " << m.video_count << (test ? " test" : " train") << " videos -> " << paths_.data_manifest(test).string() << "\n";
    }
  }

  void train_recon() {
    const auto m = dataset::read_manifest(paths_.data_manifest(false));
    reset_dir(paths_.recon_dir());
    std::vector<std::vector<double>> curves(2);
    recon::TrainOptions opts;
    opts.log_path = paths_.recon_dir() / "train_log.jsonl";
    opts.on_epoch = [&](const recon::EpochReport& e) {
      curves[0].push_back(e.mean.recon);
      curves[1].push_back(e.mean.mask_mean);
      char buf[160];
      std::snprintf(buf, sizeof(buf), "  epoch %d/%d recon %.5f kl %.2f mask %.3f total %.4f\n", e.epoch, cfg_.recon.total_epochs,
                    e.mean.recon, e.mean.kl, e.mean.mask_mean, e.mean.total);
      log_ << buf << std::flush;
    };
    recon::train_stage1(m, cfg_.recon, paths_.recon_checkpoint(), opts);
    eval::write_json(paths_.recon_dir() / "curves.json", {{"recon", curves[0]}, {"mask_mean", curves[1]}});
    write_plot(paths_.recon_dir() / "loss_curve.ppm", {curves[0]});
    write_plot(paths_.recon_dir() / "mask_curve.ppm", {curves[1]});
  }

  void encode() {
    const auto net = recon::load_recon(paths_.recon_checkpoint());
    for (bool test : {false, true}) {
      const auto data = dataset::read_manifest(paths_.data_manifest(test));
      reset_dir(paths_.latents(test));
      const auto m = latent::convert_dataset(data, net, paths_.latents(test));
      log_ << "  " << m.count() << " sequences, k = " << m.layout.k()
           << ", compression ratio " << latent::compression_ratio(m.frame_height, m.frame_width, m.layout.k()) << "\n";
    }
  }

  void train_pred() {
    const auto m = latent::read_latent_manifest(paths_.latent_manifest(false));
    reset_dir(paths_.predictor_dir());
    std::vector<double> curve;
    predict::Stage2Options opts;
    opts.log_path = paths_.predictor_dir() / "train_log.jsonl";
    opts.on_epoch = [&](const predict::Stage2Epoch& e) {
      curve.push_back(e.huber);
      char buf[96];
      std::snprintf(buf, sizeof(buf), "  epoch %d/%d huber %.6f\n", e.epoch, cfg_.predict.epochs, e.huber);
      log_ << buf << std::flush;
    };
    predict::train_stage2(m, cfg_.predict, paths_.predictor_checkpoint(), opts);
    eval::write_json(paths_.predictor_dir() / "curves.json", {{"huber", curve}});
    write_plot(paths_.predictor_dir() / "loss_curve.ppm", {curve});
  }

  void predict_stage() {
    const auto net = recon::load_recon(paths_.recon_checkpoint());
    const auto pred = predict::load_predictor(paths_.predictor_checkpoint());
    const auto data = dataset::read_manifest(paths_.data_manifest(true));
    reset_dir(paths_.predictions_dir());
    const auto& pc = pred.model.config();
    nlohmann::json videos = nlohmann::json::array();
    const int n = std::min(cfg_.eval.predict_examples, data.video_count);
    for (int i = 0; i < n; ++i) {
      const auto v = dataset::read_video(data.video_path(static_cast<std::size_t>(i)));
      const auto frames = eval::predict_frames(net, pred.model, v.frames);
      const int h = v.height(), w = v.width();
      Tensor<float> truth({pc.t_fut, h, w, 3});
      std::copy_n(v.frames.data() + static_cast<std::int64_t>(pc.t_past) * h * w * 3, truth.numel(), truth.data());
      std::vector<double> mse;
      for (int t = 0; t < pc.t_fut; ++t) {
        double acc = 0;
        const std::int64_t off = static_cast<std::int64_t>(t) * h * w * 3;
        for (std::int64_t j = 0; j < static_cast<std::int64_t>(h) * w * 3; ++j) acc += std::pow(frames[off + j] - truth[off + j], 2);
        mse.push_back(acc / (h * w * 3));
      }
      // truth on top, prediction below
      const auto top = eval::image_strip(truth), bottom = eval::image_strip(frames);
      Tensor<float> img({2 * h + 1, top.dim(1), 3});
      img.fill(1.0f);
      std::copy_n(top.data(), top.numel(), img.data());
      std::copy_n(bottom.data(), bottom.numel(), img.data() + static_cast<std::int64_t>(h + 1) * top.dim(1) * 3);
      char name[32];
      std::snprintf(name, sizeof(name), "video_%05d.ppm", i);
      io::write_netpbm(paths_.predictions_dir() / name, img);
      videos.push_back({{"video", i}, {"image", name}, {"pixel_mse", mse}});
    }
    eval::write_json(paths_.predictions_dir() / "predictions.json", {{"t_past", pc.t_past}, {"t_fut", pc.t_fut}, {"videos", videos}});
    log_ << "  " << n << " prediction strips -> " << paths_.predictions_dir().string() << "\n";
  }

  void eval_stage() {
    const auto& ec = cfg_.eval;
    reset_dir(paths_.eval_dir());
    nlohmann::json report;

    const auto lat = latent::read_latent_manifest(paths_.latent_manifest(true));
    const auto data = dataset::read_manifest(paths_.data_manifest(true));
    const auto task = eval::ProbeTask::parse(ec.probe_task);
    eval::ProbeOptions po;
    po.epochs = ec.probe_epochs;
    const auto probe = eval::evaluate_disentanglement(eval::collect_probe_data(lat, data, task.name), lat.layout, task, cfg_.seed,
                                                      ec.probe_trials, po);
    eval::write_json(paths_.eval_dir() / "probe.json", eval::to_json(probe));
    report["probe"] = eval::to_json(probe);
    log_ << "  probe " << probe.task << ": r_c " << probe.r_c_mean << ", r_p " << probe.r_p_mean << ", median gap "
         << probe.median_gap() << "\n";

    const auto net = recon::load_recon(paths_.recon_checkpoint());
    const auto pred = predict::load_predictor(paths_.predictor_checkpoint());
    eval::FrameProbeOptions fo;
    fo.epochs = ec.frame_probe_epochs;
    const auto frame_probe = eval::train_frame_probe(load_videos(false), cfg_.seed, fo);
    const auto series = eval::predict_and_score(load_videos(true), net, pred.model, frame_probe);
    eval::write_json(paths_.eval_dir() / "scores.json", eval::to_json(series));
    eval::write_series_csv(paths_.eval_dir() / "scores.csv", series);
    for (std::size_t j = 0; j < series.tasks.size(); ++j)
      write_plot(paths_.eval_dir() / (series.tasks[j] + "_mse.ppm"), {series.mse[j], series.reference_mse[j]});
    report["prediction"] = eval::to_json(series);

    if (ec.memory) {
      eval::MemoryProbe mp;
      mp.batch = ec.memory_batch;
      mp.height = cfg_.recon.height;
      mp.width = cfg_.recon.width;
      mp.duration = cfg_.synth.spec.video_length;
      mp.recon = cfg_.recon;
      mp.predictor = cfg_.predict;
      nlohmann::json mem = nlohmann::json::array();
      std::int64_t peaks[3] = {};
      int i = 0;
      for (auto st : {eval::MemoryStage::kStage1, eval::MemoryStage::kStage2, eval::MemoryStage::kBaseline}) {
        const auto r = eval::measure_activation_memory(st, mp);
        peaks[i++] = r.peak_elements;
        mem.push_back(eval::to_json(r));
        log_ << "  peak activations " << r.stage << ": " << r.peak_elements << "\n";
      }
      nlohmann::json mj{{"reports", mem},
                        {"baseline_over_stage1", static_cast<double>(peaks[2]) / static_cast<double>(peaks[0])},
                        {"baseline_over_stage2", static_cast<double>(peaks[2]) / static_cast<double>(peaks[1])}};
      eval::write_json(paths_.eval_dir() / "memory.json", mj);
      report["memory"] = mj;
    }
    eval::write_json(paths_.eval_dir() / "report.json", report);
  }

  void interp() {
    const auto net = recon::load_recon(paths_.recon_checkpoint());
    const auto data = dataset::read_manifest(paths_.data_manifest(true));
    reset_dir(paths_.interp_dir());
    const auto v0 = dataset::read_video(data.video_path(0));
    const auto v1 = dataset::read_video(data.video_path(1));
    const auto a = frame_of(v0.frames, 0);
    nlohmann::json out = nlohmann::json::object();
    for (auto c : {eval::Component::kBack, eval::Component::kWhere, eval::Component::kPose, eval::Component::kContent}) {
      // pose components move within one video; appearance components swap across videos
      const bool pose = c == eval::Component::kWhere || c == eval::Component::kPose;
      const auto b = pose ? frame_of(v0.frames, v0.length() - 1) : frame_of(v1.frames, 0);
      const auto in = eval::interpolate_latent(net, a, b, c, cfg_.eval.interp_steps);
      const std::string name = eval::to_string(c);
      io::write_netpbm(paths_.interp_dir() / (name + ".ppm"), eval::image_strip(in.frames));
      out[name] = {{"image", name + ".ppm"}, {"source_b", pose ? "test video 0, last frame" : "test video 1, first frame"},
                   {"step_mae", eval::step_mae(in)}};
    }
    eval::write_json(paths_.interp_dir() / "interp.json", {{"steps", cfg_.eval.interp_steps}, {"components", out}});
    log_ << "  interpolation strips -> " << paths_.interp_dir().string() << "\n";
  }

  PipelineConfig cfg_;
  RunPaths paths_;
  std::ostream& log_;
};

}  // namespace hdvp::pipeline
