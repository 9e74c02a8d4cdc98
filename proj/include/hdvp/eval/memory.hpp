#pragma once

// Peak activation accounting for one training step of each stage and of an
// end-to-end clip model that keeps every frame of a clip on the tape.

#include <string>

#include "hdvp/predict/predictor.hpp"
#include "hdvp/recon/train.hpp"

namespace hdvp::eval {

enum class MemoryStage { kStage1, kStage2, kBaseline };

inline const char* to_string(MemoryStage s) {
  switch (s) {
    case MemoryStage::kStage1: return "stage1";
    case MemoryStage::kStage2: return "stage2";
    case MemoryStage::kBaseline: return "baseline";
  }
  return "?";
}

struct MemoryReport {
  std::string stage;
  int batch = 0, height = 0, width = 0, channels = 3, duration = 0, k = 0;
  std::int64_t peak_elements = 0;
};

inline nlohmann::json to_json(const MemoryReport& m) {
  return {{"stage", m.stage},       {"batch", m.batch}, {"height", m.height},   {"width", m.width},
          {"channels", m.channels}, {"duration", m.duration}, {"k", m.k}, {"peak_elements", m.peak_elements}};
}

struct MemoryProbe {
  int batch = 8;
  int height = 64, width = 64;
  int duration = 16;  ///< clip length (stage 2 window / baseline clip)
  recon::ReconConfig recon;  ///< network sizes; H and W are overridden
  predict::PredictorConfig predictor;
  int baseline_channels = 16;
};

namespace detail {

/// Peak live activation elements while running `f`, above the level on entry.
template <class F>
std::int64_t peak_of(F&& f) {
  auto& meter = ActivationMeter::local();
  const auto base = meter.live;
  meter.reset_peak();
  f();
  return meter.peak - base;
}

}  // namespace detail

/// One instrumented forward/backward pass of the requested stage.
inline MemoryReport measure_activation_memory(MemoryStage stage, const MemoryProbe& p) {
  auto rc = p.recon;
  rc.height = p.height;
  rc.width = p.width;
  const auto layout = latent::LatentLayout::from(rc);
  MemoryReport rep{to_string(stage), p.batch, p.height, p.width, 3, 0, layout.k(), 0};
  Rng rng(11);
  switch (stage) {
    case MemoryStage::kStage1: {
      rc.validate();
      recon::ReconTrainer<float> trainer(rc);
      const Shape s{p.batch, 3, p.height, p.width};
      const auto x = rand_uniform<float>(s, rng, 0.f, 1.f), xp = rand_uniform<float>(s, rng, 0.f, 1.f),
                 xpp = rand_uniform<float>(s, rng, 0.f, 1.f);
      rep.duration = 2;  // a frame pair, independent of the clip length
      rep.peak_elements = detail::peak_of([&] { trainer.step(x, xp, xpp, 0); });
      break;
    }
    case MemoryStage::kStage2: {
      auto pc = p.predictor;
      pc.t_past = p.duration / 2;
      pc.t_fut = p.duration - pc.t_past;
      predict::Predictor<float> model(pc, predict::PoseSplit::from(layout));
      const auto windows = rand_uniform<float>({p.batch, p.duration, layout.k()}, rng, -1.f, 1.f);
      rep.duration = p.duration;
      rep.peak_elements = detail::peak_of([&] {
        // the latent input itself is part of the footprint
        auto input = Var<float>::constant(windows);
        std::vector<const float*> rows;
        for (int b = 0; b < p.batch; ++b) rows.push_back(input.value().data() + static_cast<std::int64_t>(b) * p.duration * layout.k());
        auto loss = predict::window_loss(model, rows);
        backward(loss);
      });
      break;
    }
    case MemoryStage::kBaseline: {
      // per-frame encoder/decoder over the whole clip: every frame's feature maps stay on the tape
      const int n = p.batch * p.duration;
      recon::ConvEncoder<float> enc(3, p.baseline_channels, p.height, p.width, layout.k(), rng);
      recon::UpsampleDecoder<float> dec(layout.k(), p.baseline_channels, p.height, p.width, 3, rng);
      const auto clip = rand_uniform<float>({n, 3, p.height, p.width}, rng, 0.f, 1.f);
      rep.duration = p.duration;
      rep.peak_elements = detail::peak_of([&] {
        auto x = Var<float>::constant(clip);
        auto y = dec(enc(x));
        auto loss = ops::mean(ops::square(ops::sub(y, x)));
        backward(loss);
      });
      break;
    }
  }
  return rep;
}

}  // namespace hdvp::eval
