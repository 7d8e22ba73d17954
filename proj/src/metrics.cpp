// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "sdfsplat/metrics.hpp"

#include <json.hpp>

#include <cmath>

#include "sdfsplat/scene_edit.hpp"
#include "sdfsplat/ssim.hpp"

namespace sdfsplat {

using ordered_json = nlohmann::ordered_json;

namespace {

void check_shapes(const Image<double>& pred, const Image<double>& ref) {
  if (!pred.same_shape(ref))
    throw SpecError("psnr: image shapes differ (" +
                    std::to_string(pred.height) + "x" +
                    std::to_string(pred.width) + "x" +
                    std::to_string(pred.channels) + " vs " +
                    std::to_string(ref.height) + "x" +
                    std::to_string(ref.width) + "x" +
                    std::to_string(ref.channels) + ")");
}

double psnr_of_mse(double mse) {
  if (!(mse > 0.0)) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

}  // namespace

double psnr(const Image<double>& pred, const Image<double>& ref) {
  check_shapes(pred, ref);
  if (pred.data.empty()) return kPsnrCap;
  double sum = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - ref.data[i];
    sum += d * d;
  }
  return psnr_of_mse(sum / double(pred.data.size()));
}

double psnr_masked(const Image<double>& pred, const Image<double>& ref,
                   const Image<uint8_t>& mask) {
  check_shapes(pred, ref);
  if (mask.height != pred.height || mask.width != pred.width)
    throw SpecError("psnr_masked: mask shape differs from images");
  double sum = 0;
  int64_t count = 0;
  for (int y = 0; y < pred.height; ++y) {
    for (int x = 0; x < pred.width; ++x) {
      if (mask.at(y, x) == 0) continue;
      for (int c = 0; c < pred.channels; ++c) {
        const double d = pred.at(y, x, c) - ref.at(y, x, c);
        sum += d * d;
      }
      count += pred.channels;
    }
  }
  if (count == 0) return kPsnrCap;
  return psnr_of_mse(sum / double(count));
}

EvalReport evaluate(const Dataset& ds, const Checkpoint& ck,
                    int holdout_every, bool holdout_split,
                    const RasterizeConfig& rc) {
  if (holdout_every < 0)
    throw SpecError("evaluate: holdout_every must be >= 0");
  EvalReport report;
  report.holdout_every = holdout_every;
  report.holdout_split = holdout_split;

  const SceneGraphLite scene = scene_from_checkpoint(ck);
  for (const FrameRecord& fr : ds.frames) {
    const bool held_out =
        holdout_every > 0 && fr.time_index % holdout_every == 0;
    if (held_out != holdout_split) continue;
    const CameraModel& cam = ds.camera(fr.camera_id);
    const RenderOutput<double> out =
        compose(scene, fr.time_index, cam, fr.extr, rc);
    const Image<double> ref = image_cast<double>(fr.image_f);

    FrameMetrics m;
    m.t = fr.time_index;
    m.camera_id = fr.camera_id;
    m.psnr = psnr(out.image, ref);
    m.ssim = ssim_mean<double>(out.image, ref);
    m.psnr_masked = psnr_masked(out.image, ref, fr.mask);
    m.ssim_masked = ssim_mean<double>(out.image, ref, &fr.mask);
    report.frames.push_back(std::move(m));
  }

  report.frame_count = static_cast<int>(report.frames.size());
  if (report.frame_count > 0) {
    for (const FrameMetrics& m : report.frames) {
      report.mean_psnr += m.psnr;
      report.mean_ssim += m.ssim;
      report.mean_psnr_masked += m.psnr_masked;
      report.mean_ssim_masked += m.ssim_masked;
    }
    report.mean_psnr /= report.frame_count;
    report.mean_ssim /= report.frame_count;
    report.mean_psnr_masked /= report.frame_count;
    report.mean_ssim_masked /= report.frame_count;
  }
  return report;
}

std::string eval_report_to_json(const EvalReport& report) {
  ordered_json j;
  j["schema"] = "sdfsplat-eval-v1";
  j["holdout_every"] = report.holdout_every;
  j["split"] = report.holdout_split ? "holdout" : "train";
  j["frame_count"] = report.frame_count;
  ordered_json mean;
  mean["psnr"] = report.mean_psnr;
  mean["ssim"] = report.mean_ssim;
  mean["psnr_masked"] = report.mean_psnr_masked;
  mean["ssim_masked"] = report.mean_ssim_masked;
  j["mean"] = mean;
  ordered_json frames = ordered_json::array();
  for (const FrameMetrics& m : report.frames) {
    ordered_json f;
    f["t"] = m.t;
    f["camera"] = m.camera_id;
    f["psnr"] = m.psnr;
    f["ssim"] = m.ssim;
    f["psnr_masked"] = m.psnr_masked;
    f["ssim_masked"] = m.ssim_masked;
    frames.push_back(f);
  }
  j["frames"] = frames;
  return j.dump(2) + "\n";
}

}  // namespace sdfsplat
