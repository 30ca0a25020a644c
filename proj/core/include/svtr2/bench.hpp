#pragma once

#include <functional>
#include <string>
#include <vector>

#include "svtr2/model.hpp"
#include "svtr2/msr.hpp"

namespace svtr2 {

// Latency summary normalized for text length: per-sample timings pool into
// per-length averages first, and the headline figure is the arithmetic mean
// of those averages, NOT the global per-sample mean, so abundant short
// samples cannot drown out rare long ones. Lengths never observed contribute
// nothing.
struct BenchReport {
  struct PerLength {
    int length = 0;
    long long count = 0;
    double avg_time = 0.0;
  };
  std::vector<PerLength> per_length;  // ascending by length
  double mean_time = 0.0;             // mean of per-length averages
  double fps = 0.0;                   // 1 / mean_time
  long long samples = 0;
};

// Pure aggregation over (label length, elapsed time) measurements.
BenchReport summarize_bench(const std::vector<std::pair<int, double>>& timings);

// Times single-image forward passes (batch size 1). `now` is injectable so
// tests can drive the arithmetic with synthetic clocks; it must be monotone.
BenchReport bench_inference(const Model<float>& model, const std::vector<RawSample>& samples,
                            ResizeMode resize, const std::function<double()>& now);

void write_bench_csv(const BenchReport& report, const std::string& path);

}  // namespace svtr2
