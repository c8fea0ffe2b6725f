// alpr: run the pipeline, serve the control API, evaluate detections, and
// exercise single stages on files.
//
// Exit codes: 0 ok, 1 environment, 2 bad input, 3 degenerate data.

#include <pthread.h>
#include <signal.h>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "alpr/backends.hpp"
#include "alpr/config.hpp"
#include "alpr/error.hpp"
#include "alpr/eval.hpp"
#include "alpr/geometry.hpp"
#include "alpr/image.hpp"
#include "alpr/ocr.hpp"
#include "alpr/pipeline.hpp"
#include "alpr/service.hpp"
#include "alpr/sources.hpp"
#include "alpr/store.hpp"

namespace {

using nlohmann::json;

std::string dump(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

int cmd_run(const std::string& source_spec, const std::string& config_path, const std::string& out) {
  auto config = alpr::load_config(config_path);
  if (!out.empty()) config.store_path = out;
  const auto backends = alpr::make_backends(config);
  auto source = alpr::open_source(source_spec, config);
  alpr::EventStore store(config.store_path);

  alpr::RunHooks hooks;
  hooks.on_detection = [&](const alpr::Detection& d) { store.append(d.event, &d.crop); };
  alpr::RunControl control;
  const auto summary = alpr::run(*source, config, backends, hooks, control);
  std::cout << dump(alpr::service::to_json(summary)) << '\n';
  if (!summary.error.empty()) {
    std::cerr << "alpr: run ended early: " << summary.error << '\n';
    return 1;
  }
  return 0;
}

int cmd_serve(const std::string& config_path, std::optional<int> port) {
  auto config = alpr::load_config(config_path);
  if (port) config.port = *port;

  // Signals are taken synchronously by a dedicated thread; block them before
  // any other thread exists so they all inherit the mask.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  alpr::service::Service svc(config);
  if (!svc.bind(config.bind_address, config.port)) {
    std::cerr << "alpr: cannot bind " << config.bind_address << ":" << config.port << '\n';
    return 1;
  }
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    svc.shutdown();
  });
  std::cerr << "alpr: serving on " << config.bind_address << ":" << config.port << '\n';
  svc.serve();
  ::kill(::getpid(), SIGTERM);  // release the waiter if serve returned on its own
  waiter.join();
  const auto summary = svc.last_summary().value_or(alpr::RunSummary{});
  std::cerr << "alpr: final summary " << dump(alpr::service::to_json(summary)) << '\n';
  return 0;
}

int cmd_eval(const std::string& pred, const std::string& gt, double iou, double cutoff,
             const std::vector<double>& f1_check, const std::string& format) {
  if (!f1_check.empty()) {
    const double f = alpr::round_to(alpr::f1(f1_check[0], f1_check[1]), 2);
    std::cout << alpr::format_fixed(f, 2) << '\n';
    return 0;
  }
  if (pred.empty() || gt.empty()) {
    throw alpr::Error(alpr::ErrorKind::InvalidArgument, "eval needs --pred and --gt (or --f1 P R)");
  }
  const auto preds = alpr::load_predictions(pred);
  const auto gts = alpr::parse_darknet_annotations(gt);
  const auto report = alpr::evaluate(preds, gts, iou, cutoff);
  if (format == "ndjson") {
    std::cout << dump(alpr::to_json(report)) << '\n';
  } else {
    std::cout << alpr::render_table(report);
  }
  return 0;
}

int cmd_preprocess(const std::string& image, const std::string& out) {
  const auto prepared = alpr::preprocess_plate(alpr::read_pnm(image));
  alpr::write_pnm(out, prepared.binary);
  std::cout << "threshold " << prepared.threshold << '\n';
  return 0;
}

int cmd_decode(const std::string& tensor_path, const std::string& spec_path, double conf, double nms_iou) {
  const auto spec = alpr::load_head_spec(spec_path);
  const auto tensor = alpr::read_head_tensor(tensor_path);
  if (tensor.grid_size != spec.grid_size || tensor.anchor_count != spec.anchor_count ||
      tensor.class_count != spec.class_count) {
    throw alpr::Error(alpr::ErrorKind::ShapeMismatch,
                      "tensor is " + std::to_string(tensor.grid_size) + "x" +
                          std::to_string(tensor.anchor_count) + "x" +
                          std::to_string(tensor.class_count) + ", spec expects " +
                          std::to_string(spec.grid_size) + "x" + std::to_string(spec.anchor_count) +
                          "x" + std::to_string(spec.class_count));
  }
  const auto boxes = alpr::nms(alpr::decode_head(tensor.values, spec, conf), nms_iou);
  for (const auto& b : boxes) {
    std::cout << dump({{"class_id", b.class_id}, {"cx", b.cx}, {"cy", b.cy}, {"w", b.w},
                       {"h", b.h}, {"score", b.score}})
              << '\n';
  }
  return 0;
}

int cmd_query(const std::string& store_path, const std::string& plate) {
  alpr::EventStore store(store_path, alpr::EventStore::Mode::ReadOnly);
  for (const auto& r : store.query_by_plate(plate)) std::cout << alpr::to_ndjson_line(r);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Automatic license plate recognition pipeline"};
  app.require_subcommand(1);

  std::string source, config, out, pred, gt, image, tensor, spec, store, plate;
  std::string format = "table";
  std::optional<int> port;
  double iou = alpr::kDefaultMatchIou, cutoff = alpr::kDefaultScoreCutoff;
  double conf = 0.25, nms_iou = 0.45;
  std::vector<double> f1_check;

  auto* run = app.add_subcommand("run", "Run the pipeline over a frame source");
  run->add_option("--source", source, "Frame directory, video file, or - for stdin")->required();
  run->add_option("--config", config, "Config file")->required();
  run->add_option("--out", out, "Event log (defaults to store_path)");

  auto* serve = app.add_subcommand("serve", "Serve the control API");
  serve->add_option("--config", config, "Config file")->required();
  serve->add_option("--port", port, "Listen port (overrides config)");

  auto* eval = app.add_subcommand("eval", "Score detections against darknet labels");
  eval->add_option("--pred", pred, "Predictions, NDJSON");
  eval->add_option("--gt", gt, "Directory of darknet label files");
  eval->add_option("--iou", iou, "Match IoU threshold")->check(CLI::Range(0.0, 1.0));
  eval->add_option("--cutoff", cutoff, "Score cutoff for P/R/F1")->check(CLI::Range(0.0, 1.0));
  eval->add_option("--f1", f1_check, "Print F1 of a precision/recall pair")->expected(2);
  eval->add_option("--format", format, "table or ndjson")->check(CLI::IsMember({"table", "ndjson"}));

  auto* pre = app.add_subcommand("preprocess", "Binarize a plate crop");
  pre->add_option("--image", image, "Plate crop (PPM or PGM)")->required();
  pre->add_option("--out", out, "Output PGM")->required();

  auto* dec = app.add_subcommand("decode", "Decode a raw detector head tensor");
  dec->add_option("--tensor", tensor, "Tensor file")->required();
  dec->add_option("--spec", spec, "Head spec file")->required();
  dec->add_option("--conf", conf, "Confidence threshold")->check(CLI::Range(0.0, 1.0));
  dec->add_option("--nms", nms_iou, "NMS IoU threshold")->check(CLI::Range(0.0, 1.0));

  auto* query = app.add_subcommand("query", "Look up events by plate text");
  query->add_option("--store", store, "Event log")->required();
  query->add_option("--plate", plate, "Plate text")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) return cmd_run(source, config, out);
    if (*serve) return cmd_serve(config, port);
    if (*eval) return cmd_eval(pred, gt, iou, cutoff, f1_check, format);
    if (*pre) return cmd_preprocess(image, out);
    if (*dec) return cmd_decode(tensor, spec, conf, nms_iou);
    if (*query) return cmd_query(store, plate);
  } catch (const alpr::Error& e) {
    std::cerr << "alpr: " << e.what() << '\n';
    return alpr::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "alpr: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
