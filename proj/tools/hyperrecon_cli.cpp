// hyperrecon command-line driver: build-data, train, landscape, serve.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>

#include "hyperrecon/data.hpp"
#include "hyperrecon/evaluation.hpp"
#include "hyperrecon/hypermodel.hpp"
#include "hyperrecon/image_io.hpp"
#include "hyperrecon/service.hpp"
#include "hyperrecon/training.hpp"

namespace fs = std::filesystem;
using namespace hyperrecon;

namespace {

struct BuildDataArgs {
  std::string out = "data";
  std::size_t train = 200, val = 50, test = 100;
  std::size_t size = 64;
  double acceleration = 4.0;
  std::uint64_t seed = 1;
};

struct TrainArgs {
  std::string data = "data";
  std::string out = "run";
  std::string mode = "uhs";
  std::vector<double> alpha;
  std::size_t batch = 32, keep = 8, steps = 3000, checkpoint_every = 100;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::string size = "small";
  bool resume = false;
};

struct LandscapeArgs {
  std::string checkpoint;
  std::string data = "data";
  std::string out = "landscape";
  std::size_t grid = 20;
  double sweep_lo = 0.0, sweep_hi = 6.0, sweep_step = 0.25;
  std::vector<double> contours{0.0, 0.5, 1.0, 2.0};
};

struct ServeArgs {
  std::string checkpoint;
  std::string data = "data";
  std::string landscape;
  std::string host = "127.0.0.1";
  int port = 8080;
};

int build_data(const BuildDataArgs& a) {
  const Dataset ds = build_dataset({a.train, a.val, a.test}, a.size, a.acceleration, a.seed);
  save_dataset(ds, a.out);
  std::cout << "wrote " << a.out << ": " << a.train << "/" << a.val << "/" << a.test << " images of " << a.size
            << "x" << a.size << ", mask keeps " << ds.mask.retained_count() << " of " << ds.mask.size() << "\n";
  return 0;
}

int run_train(const TrainArgs& a) {
  TrainConfig cfg;
  cfg.batch_size = a.batch;
  cfg.keep_count = std::min(a.keep, a.batch);
  cfg.learning_rate = a.lr;
  cfg.steps = a.steps;
  cfg.seed = a.seed;
  cfg.mode = parse_sampling_mode(a.mode);
  cfg.checkpoint_every = a.checkpoint_every;
  cfg.hypernet_size = a.size;
  if (cfg.mode == SamplingMode::fixed) {
    if (a.alpha.empty()) throw InvalidParameter("--alpha is required with --mode fixed");
    cfg.fixed_alpha = AlphaVector(a.alpha);
  }
  const Dataset ds = load_dataset(a.data);
  auto report = [&](std::size_t step, const StepStats& st) {
    if (step % 50 == 0 || step + 1 == cfg.steps)
      std::cout << "step " << step << " loss " << st.kept_mean(&SampleStats::loss) << " J "
                << st.kept_mean(&SampleStats::data) << " kept " << st.kept_fraction << std::endl;
  };
  const TrainResult res = a.resume ? resume(cfg, ds, a.out, report) : train(cfg, ds, a.out, report);
  std::cout << "checkpoint " << res.checkpoint_path << " at step " << res.step << "\n";
  return 0;
}

int run_landscape(const LandscapeArgs& a) {
  if (!fs::exists(a.checkpoint)) throw IoError(a.checkpoint, "checkpoint not found");
  const Dataset ds = load_dataset(a.data);
  const auto thresholds = threshold_sweep(a.sweep_lo, a.sweep_hi, a.sweep_step);

  // Keep every reconstruction's magnitude per test image for the pixel-wise range curve.
  std::vector<std::vector<ScoredReconstruction>> per_image(ds.test.size());
  const Landscape land = compute_landscape(a.checkpoint, ds.test, a.grid,
                                           [&](std::size_t, std::size_t k, const ComplexGrid& recon, double r) {
                                             per_image[k].push_back({recon, r});
                                           });
  fs::create_directories(a.out);
  const fs::path out(a.out);
  io::write_text((out / "landscape.csv").string(), landscape_csv(land));
  io::write_text((out / "landscape.png").string(), landscape_png(land, a.contours));

  std::ostringstream area, range;
  area << "threshold_db,area_percent\n";
  range << "threshold_db,mean_pixelwise_range\n";
  for (double t : thresholds) {
    area << t << "," << area_above_threshold(land, t) << "\n";
    double total = 0.0;
    for (const auto& set : per_image) total += pixelwise_range(set, t);
    range << t << "," << total / static_cast<double>(per_image.size()) << "\n";
  }
  io::write_text((out / "area_curve.csv").string(), area.str());
  io::write_text((out / "range_curve.csv").string(), range.str());

  const auto best = land.alpha(land.argmax());
  std::cout << "max mean RPSNR " << land.max() << " dB at alpha (" << best[0] << ", " << best[1] << ")\n"
            << "area above 0.5 dB: " << area_above_threshold(land, 0.5) << "%\n";
  return 0;
}

int run_serve(ServeArgs a) {
  if (const char* env = std::getenv("HYPERRECON_DATA")) a.data = env;
  if (!fs::exists(a.checkpoint)) throw IoError(a.checkpoint, "checkpoint not found");
  std::optional<std::string> csv;
  if (!a.landscape.empty()) csv = io::read_text(a.landscape);
  const Dataset ds = load_dataset(a.data);
  ReconService service(load_checkpoint(a.checkpoint).net, ds.test, csv);
  httplib::Server server;
  service.mount(server);
  std::cout << "listening on http://" << a.host << ":" << a.port << std::endl;
  if (!server.listen(a.host, a.port)) {
    std::cerr << "error: cannot bind " << a.host << ":" << a.port << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hypernetwork-based regularization-agnostic MRI reconstruction"};
  app.require_subcommand(1);

  BuildDataArgs bd;
  auto* build_cmd = app.add_subcommand("build-data", "Generate phantoms, the sampling mask and measurements");
  build_cmd->add_option("-o,--out", bd.out, "Output directory")->capture_default_str();
  build_cmd->add_option("--train", bd.train, "Training images")->capture_default_str();
  build_cmd->add_option("--val", bd.val, "Validation images")->capture_default_str();
  build_cmd->add_option("--test", bd.test, "Test images")->capture_default_str();
  build_cmd->add_option("--size", bd.size, "Image side length")->capture_default_str();
  build_cmd->add_option("--acceleration", bd.acceleration, "Undersampling factor")->capture_default_str();
  build_cmd->add_option("--seed", bd.seed, "Dataset seed")->capture_default_str();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a hypernetwork");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->capture_default_str();
  train_cmd->add_option("-o,--out", tr.out, "Run directory")->capture_default_str();
  train_cmd->add_option("--mode", tr.mode, "uhs, dhs or fixed")
      ->check(CLI::IsMember({"uhs", "dhs", "fixed"}))
      ->capture_default_str();
  train_cmd->add_option("--alpha", tr.alpha, "Alpha for --mode fixed")->expected(1, 2);
  train_cmd->add_option("-B,--batch", tr.batch, "Mini-batch size")->capture_default_str();
  train_cmd->add_option("-K,--keep", tr.keep, "Samples kept per batch (dhs)")->capture_default_str();
  train_cmd->add_option("--lr", tr.lr, "ADAM learning rate")->capture_default_str();
  train_cmd->add_option("--steps", tr.steps, "Step budget")->capture_default_str();
  train_cmd->add_option("--seed", tr.seed, "Training seed")->capture_default_str();
  train_cmd->add_option("--size", tr.size, "Hypernetwork size")
      ->check(CLI::IsMember({"small", "medium", "large"}))
      ->capture_default_str();
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every, "Steps between checkpoints")->capture_default_str();
  train_cmd->add_flag("--resume", tr.resume, "Continue from the run directory's checkpoint");

  LandscapeArgs la;
  auto* land_cmd = app.add_subcommand("landscape", "Evaluate a checkpoint over an alpha grid");
  land_cmd->add_option("checkpoint", la.checkpoint, "Checkpoint file")->required();
  land_cmd->add_option("--data", la.data, "Dataset directory")->capture_default_str();
  land_cmd->add_option("-o,--out", la.out, "Output directory")->capture_default_str();
  land_cmd->add_option("-G,--grid", la.grid, "Grid resolution per axis")->capture_default_str();
  land_cmd->add_option("--contours", la.contours, "Contour levels in dB");

  ServeArgs sv;
  auto* serve_cmd = app.add_subcommand("serve", "Serve reconstructions over HTTP");
  serve_cmd->add_option("checkpoint", sv.checkpoint, "Checkpoint file")->required();
  serve_cmd->add_option("--data", sv.data, "Dataset directory (HYPERRECON_DATA overrides)")->capture_default_str();
  serve_cmd->add_option("--landscape", sv.landscape, "Landscape CSV to expose at /api/landscape");
  serve_cmd->add_option("--host", sv.host)->capture_default_str();
  serve_cmd->add_option("--port", sv.port)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*build_cmd) return build_data(bd);
    if (*train_cmd) return run_train(tr);
    if (*land_cmd) return run_landscape(la);
    if (*serve_cmd) return run_serve(sv);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
