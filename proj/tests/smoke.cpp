#include "scorelab/scorelab.hpp"
#include <chrono>
#include <iostream>
using namespace scorelab;
int main() {
  DatasetSpec spec;  // defaults: 8 classes, 16x16, 1ch, 400/class
  auto t0 = std::chrono::steady_clock::now();
  auto [train, test] = generate_dataset(spec);
  auto t1 = std::chrono::steady_clock::now();
  std::cout << "gen " << std::chrono::duration<double>(t1-t0).count() << "s, train=" << train.size() << "\n";
  std::cout << "centroid acc " << nearest_centroid_accuracy(train, test, 8) << "\n";

  auto sched = make_schedule("linear-beta", 200);

  TrainConfig cfg; cfg.epochs = 2; cfg.seed = 1;
  auto vic = init_classifier("conv_small", 8, 1, 16, 1);
  t0 = std::chrono::steady_clock::now();
  try { train_classifier(vic, train, cfg); } catch (const std::exception& e) { std::cout << "(loss gate: " << e.what() << ")\n"; }
  t1 = std::chrono::steady_clock::now();
  std::cout << "conv 2 epochs " << std::chrono::duration<double>(t1-t0).count() << "s, acc " << classifier_accuracy(vic, test) << "\n";

  auto den = init_denoiser(1, 16, sched, 1, 8);
  t0 = std::chrono::steady_clock::now();
  try { train_denoiser(den, train, sched, cfg); } catch (const std::exception& e) { std::cout << "(loss gate: " << e.what() << ")\n"; }
  t1 = std::chrono::steady_clock::now();
  std::cout << "denoiser(base8) 2 epochs " << std::chrono::duration<double>(t1-t0).count() << "s\n";

  auto tc = init_time_classifier(8, 1, 16, sched, 1);
  t0 = std::chrono::steady_clock::now();
  try { train_time_classifier(tc, train, sched, cfg); } catch (const std::exception& e) { std::cout << "(loss gate: " << e.what() << ")\n"; }
  t1 = std::chrono::steady_clock::now();
  std::cout << "timecls 2 epochs " << std::chrono::duration<double>(t1-t0).count() << "s\n";
  return 0;
}
