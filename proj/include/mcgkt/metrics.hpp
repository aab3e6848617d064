#pragma once

#include <filesystem>
#include <string>
#include <tuple>
#include <vector>

#include "mcgkt/tensor.hpp"

namespace mcgkt {

// Peak signal-to-noise ratio in dB on [0,255]-scaled values, single MSE over
// all channels jointly. Returns +infinity for identical images.
double psnr(const Tensor& a, const Tensor& b);

// Structural similarity with the reference configuration: 11x11 Gaussian
// window (sigma 1.5), K1 = 0.01, K2 = 0.03 on [0,255]-scaled values, computed
// per channel and averaged. Requires H, W >= 11.
double ssim(const Tensor& a, const Tensor& b);

struct EvalRow {
  std::string name;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // sorted by name
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::vector<std::string> unmatched;  // stems present in only one directory

  std::string csv() const;    // header name,psnr_db,ssim; `inf` for infinite
  std::string table() const;  // human-readable
};

// Rows are (name, derained, clean) triples.
EvalReport evaluate(const std::vector<std::tuple<std::string, Tensor, Tensor>>& pairs);

// Pairs PNGs across two directories by filename stem; unmatched stems are
// listed and excluded.
EvalReport evaluate_dir(const std::filesystem::path& derained_dir,
                        const std::filesystem::path& clean_dir);

// Recomputes an EvalReport from CSV text (used to cross-check emitted means).
EvalReport parse_report_csv(const std::string& csv_text);

}  // namespace mcgkt
