// pmtrans: synthetic data generation, training, evaluation, prediction,
// gradient checking, and the attention complexity audit.

#include <CLI11.hpp>
#include <Eigen/Core>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "pmt/checkpoint.hpp"
#include "pmt/complexity.hpp"
#include "pmt/data.hpp"
#include "pmt/pgm.hpp"
#include "pmt/runconfig.hpp"
#include "pmt/train.hpp"
#include "pmt/verify.hpp"

namespace {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitFailedCheck = 1;
constexpr int kExitUsage = 2;

int cmd_synth(const std::string& out_dir, long long count, long long height, long long width,
              std::uint64_t seed) {
  auto samples = pmt::generate_synthetic_dataset<float>(count, height, width, seed);
  fs::create_directories(out_dir);
  pmt::save_dataset(out_dir, samples);
  std::cout << "wrote " << samples.size() << " samples (" << height << "x" << width << ") to "
            << out_dir << "\n";
  return kExitOk;
}

template <typename S>
int run_training(const pmt::RunConfig& cfg, const std::string& data_dir,
                 const std::string& out_dir) {
  auto dataset = pmt::load_dataset<S>(data_dir);
  if (dataset.empty()) throw pmt::ContractError("empty-dataset", data_dir);
  pmt::PMTransConfig model_cfg = cfg.model;
  model_cfg.height = dataset[0].image.dim(1);
  model_cfg.width = dataset[0].image.dim(2);
  model_cfg.channels = dataset[0].image.dim(0);
  pmt::PMTransModel<S> model(model_cfg);
  std::cout << "training on " << dataset.size() << " samples, " << model.parameter_count()
            << " parameters, precision " << cfg.train.precision << "\n";
  auto result = pmt::train(model, dataset, cfg.train, out_dir,
                           pmt::EpochCallback<S>([](pmt::PMTransModel<S>&, const pmt::EpochStats& s) {
                             if (s.epoch % 10 == 0)
                               std::cout << "epoch " << s.epoch << " lr " << s.lr << " loss "
                                         << s.train_loss << " val_dice "
                                         << pmt::format_dice_percent(s.val_dice) << "\n";
                           }));
  std::cout << "best val_dice " << pmt::format_dice_percent(result.best_val_dice) << " at epoch "
            << result.best_epoch << "\n";
  if (!result.best_checkpoint.empty()) std::cout << "checkpoint " << result.best_checkpoint << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
  pmt::RunConfig cfg =
      config_path.empty() ? pmt::default_run_config() : pmt::load_run_config(config_path);
  cfg.train.validate();
  fs::create_directories(out_dir);
  {
    std::ofstream echo(fs::path(out_dir) / "effective_config.txt");
    if (!echo) throw pmt::IoError("cannot-open-file", (fs::path(out_dir) / "effective_config.txt").string());
    echo << pmt::serialize_run_config(cfg);
  }
  if (cfg.train.precision == "float64") return run_training<double>(cfg, data_dir, out_dir);
  return run_training<float>(cfg, data_dir, out_dir);
}

int cmd_eval(const std::string& model_path, const std::string& data_dir) {
  auto model = pmt::load_checkpoint<float>(model_path);
  auto dataset = pmt::load_dataset<float>(data_dir);
  if (dataset.empty()) throw pmt::ContractError("empty-dataset", data_dir);
  const double dice = pmt::evaluate(model, dataset);
  std::cout << "mean_dice_percent=" << pmt::format_dice_percent(dice)
            << " samples=" << dataset.size() << "\n";
  return kExitOk;
}

int cmd_predict(const std::string& model_path, const std::string& image_path,
                const std::string& out_path) {
  auto model = pmt::load_checkpoint<float>(model_path);
  pmt::Tensor<float> image = pmt::tensor_from_record<float>(pmt::read_pmtn(image_path));
  if (image.rank() != 3)
    throw pmt::IoError("bad-image-rank", "expected [C,H,W], got " + pmt::shape_str(image.shape()));
  const pmt::Index C = image.dim(0), H = image.dim(1), W = image.dim(2);
  pmt::Tensor<float> batch({1, C, H, W});
  std::copy(image.data(), image.data() + image.numel(), batch.data());
  auto out = model.forward(batch, /*training=*/false, nullptr);
  pmt::Tensor<float> probs = pmt::sigmoid(out.full, nullptr);
  pmt::Tensor<float> mask({1, H, W});
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(H * W));
  for (pmt::Index i = 0; i < H * W; ++i) {
    const bool fg = probs.data()[i] >= 0.5f;
    mask.data()[i] = fg ? 1.0f : 0.0f;
    pixels[static_cast<std::size_t>(i)] = fg ? 255 : 0;
  }
  pmt::write_pmtn(out_path, pmt::to_u8_record(mask));
  fs::path pgm_path(out_path);
  pgm_path.replace_extension(".pgm");
  pmt::write_pgm(pgm_path.string(), W, H, pixels);
  std::cout << "mask " << out_path << "\n" << "visualization " << pgm_path.string() << "\n";
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, double tolerance) {
  const double tol_unit = tolerance > 0 ? tolerance : 1e-4;
  const double tol_model = tolerance > 0 ? tolerance : 1e-3;
  bool all_pass = true;
  for (const auto& c : pmt::run_gradient_battery(seed, tol_unit, tol_model)) {
    const bool pass = c.report.max_rel_error <= c.tolerance;
    all_pass = all_pass && pass;
    std::cout << "check=" << c.name << " coords=" << c.report.coords_checked
              << " max_rel_error=" << c.report.max_rel_error << " tolerance=" << c.tolerance
              << " status=" << (pass ? "PASS" : "FAIL") << "\n";
  }
  std::cout << (all_pass ? "PASS" : "FAIL") << "\n";
  return all_pass ? kExitOk : kExitFailedCheck;
}

int cmd_audit(long long height, long long width, const std::string& csv_path) {
  const auto report = pmt::scheme_comparison_report(height, width);
  std::cout << report.table();
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    if (!out) throw pmt::IoError("cannot-open-file", csv_path);
    out << report.csv();
    std::cout << "csv " << csv_path << "\n";
  }
  return report.counts_verified ? kExitOk : kExitFailedCheck;
}

}  // namespace

int main(int argc, char** argv) {
  Eigen::setNbThreads(pmt::thread_count());

  CLI::App app{"Pyramid segmentation-network kernel library and training harness"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic blob dataset");
  std::string synth_out;
  long long synth_count = 48, synth_h = 64, synth_w = 64;
  std::uint64_t synth_seed = 1;
  synth->add_option("--out", synth_out, "output dataset directory")->required();
  synth->add_option("--count", synth_count, "sample count");
  synth->add_option("--height", synth_h, "image height");
  synth->add_option("--width", synth_w, "image width");
  synth->add_option("--seed", synth_seed, "generator seed");

  auto* train = app.add_subcommand("train", "train a model on a dataset directory");
  std::string train_config, train_data, train_out;
  train->add_option("--config", train_config, "key=value run configuration file");
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "run output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string eval_model, eval_data;
  eval->add_option("--model", eval_model, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();

  auto* predict = app.add_subcommand("predict", "segment one image");
  std::string pred_model, pred_image, pred_out;
  predict->add_option("--model", pred_model, "checkpoint file")->required();
  predict->add_option("--image", pred_image, "input image (PMTN)")->required();
  predict->add_option("--out", pred_out, "output mask path (PMTN; a PGM is written alongside)")
      ->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::uint64_t gc_seed = 7;
  double gc_tol = 0.0;
  gradcheck->add_option("--seed", gc_seed, "seed for parameters and probe input");
  gradcheck->add_option("--tolerance", gc_tol, "override the per-check tolerances");

  auto* audit = app.add_subcommand("audit", "attention pair-count audit");
  long long audit_h = 128, audit_w = 128;
  std::string audit_csv;
  audit->add_option("--height", audit_h, "image height")->required();
  audit->add_option("--width", audit_w, "image width")->required();
  audit->add_option("--csv", audit_csv, "also write the report as CSV");

  try {
    app.parse(argc, argv);
    if (*synth) return cmd_synth(synth_out, synth_count, synth_h, synth_w, synth_seed);
    if (*train) return cmd_train(train_config, train_data, train_out);
    if (*eval) return cmd_eval(eval_model, eval_data);
    if (*predict) return cmd_predict(pred_model, pred_image, pred_out);
    if (*gradcheck) return cmd_gradcheck(gc_seed, gc_tol);
    if (*audit) return cmd_audit(audit_h, audit_w, audit_csv);
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const pmt::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailedCheck;
  } catch (const pmt::CheckError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailedCheck;
  } catch (const pmt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: internal " << e.what() << "\n";
    return kExitUsage;
  }
}
