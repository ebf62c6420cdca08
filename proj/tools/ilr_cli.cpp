#include "ilr/checkpoint.hpp"
#include "ilr/cube_io.hpp"
#include "ilr/diagnostics.hpp"
#include "ilr/metrics.hpp"
#include "ilr/noise.hpp"
#include "ilr/synthetic.hpp"
#include "ilr/trainer.hpp"

#include "CLI11.hpp"

#include <omp.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace ilr;

namespace {

enum Exit { ok = 0, usage = 1, data = 2, numerical = 3 };

struct UsageError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

NoiseSpec load_noise_config(fs::path const &path)
{
  try {
    return NoiseSpec::load(path);
  } catch (std::invalid_argument const &e) {
    throw DataError(e.what());
  }
}

CubeDtype parse_dtype(std::string const &s)
{
  if (s == "f32") {
    return CubeDtype::f32;
  }
  if (s == "f64") {
    return CubeDtype::f64;
  }
  throw UsageError("dtype must be f32 or f64, got '" + s + "'");
}

std::vector<fs::path> cube_files(fs::path const &dir)
{
  if (!fs::is_directory(dir)) {
    throw DataError("not a directory: " + dir.string());
  }
  std::vector<fs::path> files;
  for (auto const &e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".cube") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw DataError("no .cube files in " + dir.string());
  }
  return files;
}

int report(std::vector<CheckResult> const &results)
{
  for (auto const &r : results) {
    std::cerr << format_check(r) << '\n';
  }
  bool const pass = all_passed(results);
  std::cerr << (pass ? "all checks passed" : "some checks failed") << '\n';
  return pass ? ok : numerical;
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Iterative low-rank network for hyperspectral denoising"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads (1 is the determinism baseline)")->check(CLI::PositiveNumber);

  // add-noise
  auto *cmd_noise = app.add_subcommand("add-noise", "Corrupt a clean cube with a synthetic noise model");
  std::string noise_in, noise_out, noise_kind = "noniid", noise_config;
  NoiseSpec ns;
  cmd_noise->add_option("--in", noise_in, "Clean HSICUBE1 file")->required();
  cmd_noise->add_option("--out", noise_out, "Noisy output file")->required();
  cmd_noise->add_option("--config", noise_config, "Noise spec file; flags given explicitly override it");
  auto *o_kind = cmd_noise->add_option("--kind", noise_kind, "noniid, mixture or corr");
  auto *o_lo = cmd_noise->add_option("--sigma-lo", ns.sigma_lo, "Lowest band sigma (0-255 scale)");
  auto *o_hi = cmd_noise->add_option("--sigma-hi", ns.sigma_hi, "Highest band sigma (0-255 scale)");
  auto *o_beta = cmd_noise->add_option("--beta", ns.beta, "Peak sigma of the correlated-variance curve");
  auto *o_eta = cmd_noise->add_option("--eta", ns.eta, "Width of the correlated-variance curve");
  auto *o_seed = cmd_noise->add_option("--seed", ns.seed, "Noise seed");
  std::string noise_dtype = "f64";
  cmd_noise->add_option("--dtype", noise_dtype, "Output dtype (f32 or f64)");

  // denoise
  auto *cmd_denoise = app.add_subcommand("denoise", "Denoise a cube with a trained checkpoint");
  std::string dn_in, dn_out, dn_ckpt, dn_dtype = "f64";
  std::size_t dn_iters = 0;
  cmd_denoise->add_option("--in", dn_in, "Noisy HSICUBE1 file")->required();
  cmd_denoise->add_option("--out", dn_out, "Denoised output file")->required();
  cmd_denoise->add_option("--checkpoint", dn_ckpt, "ILRN0001 checkpoint")->required();
  auto *o_iters = cmd_denoise->add_option("--iterations", dn_iters, "Refinement steps K (default: as trained)");
  cmd_denoise->add_option("--dtype", dn_dtype, "Output dtype (f32 or f64)");

  // train
  auto *cmd_train = app.add_subcommand("train", "Train a network on a directory of clean .cube files");
  std::string tr_dir, tr_ckpt, tr_noise, tr_log;
  TrainConfig tc;
  std::size_t patch_bands = 31, patch_size = 64;
  bool micro = false, no_rmm = false;
  cmd_train->add_option("--data-dir", tr_dir, "Directory of clean HSICUBE1 files (*.cube)")->required();
  cmd_train->add_option("--out-checkpoint", tr_ckpt, "Checkpoint to write")->required();
  cmd_train->add_option("--noise-config", tr_noise, "Noise spec file")->required();
  cmd_train->add_option("--epochs", tc.epochs, "Epochs")->check(CLI::PositiveNumber);
  cmd_train->add_option("--batch", tc.batch_size, "Batch size")->check(CLI::PositiveNumber);
  cmd_train->add_option("--seed", tc.seed, "Initialization, crop and shuffle seed");
  cmd_train->add_option("--lr", tc.learning_rate, "Initial learning rate")->check(CLI::NonNegativeNumber);
  cmd_train->add_option("--halve-every", tc.halve_every_epochs, "Halve the learning rate every N epochs");
  cmd_train->add_option("--iterations", tc.iterations_k, "Refinement steps K")->check(CLI::PositiveNumber);
  cmd_train->add_option("--patch-bands", patch_bands, "Patch bands")->check(CLI::PositiveNumber);
  cmd_train->add_option("--patch-size", patch_size, "Patch height and width")->check(CLI::PositiveNumber);
  cmd_train->add_option("--patches-per-cube", tc.patches_per_cube, "Fresh crops per cube and epoch")
    ->check(CLI::PositiveNumber);
  cmd_train->add_option("--clip", tc.clip_norm, "Global gradient norm limit (0 disables)");
  cmd_train->add_flag("--micro", micro, "Channel ladders divided by four");
  cmd_train->add_flag("--no-rmm", no_rmm, "Disable the rank minimization module");
  cmd_train->add_option("--log", tr_log, "Write the per-epoch TSV log here instead of stdout");

  // eval
  auto *cmd_eval = app.add_subcommand("eval", "Print PSNR, SSIM and SAM of a prediction against a reference");
  std::string ev_pred, ev_ref;
  cmd_eval->add_option("--pred", ev_pred, "Prediction")->required();
  cmd_eval->add_option("--ref", ev_ref, "Reference")->required();

  // grad-check
  auto *cmd_grad = app.add_subcommand("grad-check", "Finite-difference gradient suites");
  std::string gc_module = "all";
  double gc_tol = -1;
  cmd_grad->add_option("--module", gc_module, "rmm, layers, network or all")
    ->check(CLI::IsMember({"rmm", "layers", "network", "all"}));
  cmd_grad->add_option("--tolerance", gc_tol, "Relative error limit (default 1e-4 modules, 1e-3 network)");

  // self-test
  auto *cmd_self = app.add_subcommand("self-test", "Wavelet reconstruction, SVT oracle and metric identities");

  // import-raw
  auto *cmd_raw = app.add_subcommand("import-raw", "Wrap a headerless band-major little-endian file");
  std::string raw_in, raw_out, raw_dtype = "f32";
  std::size_t raw_b = 0, raw_h = 0, raw_w = 0;
  cmd_raw->add_option("--in", raw_in, "Raw file")->required();
  cmd_raw->add_option("--out", raw_out, "HSICUBE1 output")->required();
  cmd_raw->add_option("--bands", raw_b, "Bands")->required()->check(CLI::PositiveNumber);
  cmd_raw->add_option("--height", raw_h, "Height")->required()->check(CLI::PositiveNumber);
  cmd_raw->add_option("--width", raw_w, "Width")->required()->check(CLI::PositiveNumber);
  cmd_raw->add_option("--dtype", raw_dtype, "Element type of the raw file (f32 or f64)");

  // synth
  auto *cmd_synth = app.add_subcommand("synth", "Write procedurally generated low-rank clean cubes");
  std::string sy_dir;
  std::size_t sy_count = 8;
  std::uint64_t sy_seed = 0;
  SyntheticSpec sy;
  cmd_synth->add_option("--out-dir", sy_dir, "Output directory (created if missing)")->required();
  cmd_synth->add_option("--count", sy_count, "Number of cubes")->check(CLI::PositiveNumber);
  cmd_synth->add_option("--seed", sy_seed, "First seed; cube i uses seed + i");
  cmd_synth->add_option("--bands", sy.bands, "Bands")->check(CLI::PositiveNumber);
  cmd_synth->add_option("--height", sy.height, "Height")->check(CLI::PositiveNumber);
  cmd_synth->add_option("--width", sy.width, "Width")->check(CLI::PositiveNumber);
  cmd_synth->add_option("--rank", sy.rank, "Spectral rank")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (CLI::CallForHelp const &e) {
    return app.exit(e);
  } catch (CLI::CallForAllHelp const &e) {
    return app.exit(e);
  } catch (CLI::ParseError const &e) {
    app.exit(e, std::cerr, std::cerr);
    return usage;
  }
  omp_set_dynamic(0);
  omp_set_num_threads(threads);

  try {
    if (*cmd_noise) {
      NoiseSpec spec = noise_config.empty() ? NoiseSpec{} : load_noise_config(noise_config);
      try {
        if (!noise_config.empty()) {
          // keep flags given on the command line, take everything else from the file
          NoiseSpec const flags = ns;
          ns = spec;
          if (*o_lo) ns.sigma_lo = flags.sigma_lo;
          if (*o_hi) ns.sigma_hi = flags.sigma_hi;
          if (*o_beta) ns.beta = flags.beta;
          if (*o_eta) ns.eta = flags.eta;
          if (*o_seed) ns.seed = flags.seed;
        }
        if (noise_config.empty() || *o_kind) {
          ns.kind = parse_noise_kind(noise_kind);
        }
        ns.validate();
      } catch (std::invalid_argument const &e) {
        throw UsageError(e.what());
      }
      CubeDtype const dt = parse_dtype(noise_dtype);
      write_cube(noise_out, apply_noise(read_cube(noise_in), ns), dt);
      return ok;
    }

    if (*cmd_denoise) {
      CubeDtype const dt = parse_dtype(dn_dtype);
      IlrNet const net = load_network(dn_ckpt);
      std::size_t const K = *o_iters ? dn_iters : net.config().iterations;
      if (K > net.config().iterations) {
        throw UsageError("--iterations " + std::to_string(K) + " exceeds the " +
                         std::to_string(net.config().iterations) + " refinement nets in the checkpoint");
      }
      HsiCube const y = read_cube(dn_in);
      HsiCube const x = net.forward(y, K).x;
      if (!x.all_finite()) {
        throw NumericalError("denoised cube contains non-finite values");
      }
      write_cube(dn_out, x, dt);
      return ok;
    }

    if (*cmd_train) {
      NoiseSpec const noise = load_noise_config(tr_noise);
      std::vector<HsiCube> dataset;
      for (auto const &f : cube_files(tr_dir)) {
        dataset.push_back(read_cube(f));
      }
      tc.patch_shape = {patch_bands, patch_size, patch_size};
      tc.network = micro ? NetworkConfig::micro(tc.iterations_k) : NetworkConfig{};
      tc.network.coarse.rmm_enabled = !no_rmm;
      std::ofstream log_file;
      if (!tr_log.empty()) {
        log_file.open(tr_log, std::ios::trunc);
        if (!log_file) {
          throw DataError("cannot create " + tr_log);
        }
      }
      std::ostream &log = tr_log.empty() ? std::cout : log_file;
      auto result = train(dataset, noise, tc, [&](EpochLog const &e) { log << format_log_line(e) << std::endl; });
      save_network(tr_ckpt, result.net);
      return ok;
    }

    if (*cmd_eval) {
      HsiCube const pred = read_cube(ev_pred);
      HsiCube const ref = read_cube(ev_ref);
      if (pred.shape() != ref.shape()) {
        throw DataError("shape mismatch: " + shape_str(pred.shape()) + " vs " + shape_str(ref.shape()));
      }
      std::cout << evaluate(pred, ref).to_line() << '\n';
      return ok;
    }

    if (*cmd_grad) {
      std::vector<CheckResult> results;
      auto tol = [&](double def) { return gc_tol > 0 ? gc_tol : def; };
      if (gc_module == "rmm" || gc_module == "all") {
        auto r = gradcheck_rmm(tol(1e-4));
        results.insert(results.end(), r.begin(), r.end());
      }
      if (gc_module == "layers" || gc_module == "all") {
        auto r = gradcheck_layers(tol(1e-4));
        results.insert(results.end(), r.begin(), r.end());
      }
      if (gc_module == "network" || gc_module == "all") {
        auto r = gradcheck_network(tol(1e-3));
        results.insert(results.end(), r.begin(), r.end());
      }
      return report(results);
    }

    if (*cmd_self) {
      return report(self_test());
    }

    if (*cmd_raw) {
      write_cube(raw_out, import_raw(raw_in, raw_b, raw_h, raw_w, parse_dtype(raw_dtype)), parse_dtype(raw_dtype));
      return ok;
    }

    if (*cmd_synth) {
      fs::create_directories(sy_dir);
      for (std::size_t i = 0; i < sy_count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "synth_%03zu.cube", i);
        write_cube(fs::path(sy_dir) / name, make_lowrank_cube(sy, sy_seed + i));
      }
      return ok;
    }
  } catch (UsageError const &e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return usage;
  } catch (CubeIoError const &e) {
    std::cerr << "data error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return data;
  } catch (CheckpointError const &e) {
    std::cerr << "data error [checkpoint]: " << e.what() << '\n';
    return data;
  } catch (DataError const &e) {
    std::cerr << "data error: " << e.what() << '\n';
    return data;
  } catch (ShapeError const &e) {
    std::cerr << "data error [shape]: " << e.what() << '\n';
    return data;
  } catch (fs::filesystem_error const &e) {
    std::cerr << "data error [io]: " << e.what() << '\n';
    return data;
  } catch (TrainingError const &e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return numerical;
  } catch (NumericalError const &e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return numerical;
  } catch (std::exception const &e) {
    std::cerr << "error: " << e.what() << '\n';
    return data;
  }
  return usage;
}
