#include "svtr2/bench.hpp"

#include <fstream>
#include <map>

#include "svtr2/common.hpp"
#include "svtr2/image.hpp"

namespace svtr2 {

BenchReport summarize_bench(const std::vector<std::pair<int, double>>& timings) {
  BenchReport report;
  std::map<int, std::pair<double, long long>> by_length;  // length -> (total, count)
  for (const auto& [length, elapsed] : timings) {
    auto& [total, count] = by_length[length];
    total += elapsed;
    ++count;
    ++report.samples;
  }
  double avg_sum = 0.0;
  for (const auto& [length, tc] : by_length) {
    if (tc.second <= 0) continue;  // lengths never observed contribute nothing
    BenchReport::PerLength p;
    p.length = length;
    p.count = tc.second;
    p.avg_time = tc.first / double(tc.second);
    avg_sum += p.avg_time;
    report.per_length.push_back(p);
  }
  if (!report.per_length.empty()) {
    report.mean_time = avg_sum / double(report.per_length.size());
    if (report.mean_time > 0) report.fps = 1.0 / report.mean_time;
  }
  return report;
}

BenchReport bench_inference(const Model<float>& model, const std::vector<RawSample>& samples,
                            ResizeMode resize, const std::function<double()>& now) {
  runtime_init();
  std::vector<std::pair<int, double>> timings;
  timings.reserve(samples.size());
  for (const RawSample& s : samples) {
    AspectBucket target = target_for(resize, s.image.h, s.image.w);
    Image r3 = with_channels(resize_bilinear(s.image, target.height, target.width), 3);
    std::vector<float> data(r3.data.begin(), r3.data.end());
    Tensor<float> img = Tensor<float>::from({3, target.height, target.width}, std::move(data));
    const double t0 = now();
    (void)model.forward(img);
    const double t1 = now();
    timings.emplace_back(int(s.label.size()), t1 - t0);
  }
  return summarize_bench(timings);
}

void write_bench_csv(const BenchReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError(str_cat("bench: cannot open ", path));
  f << "length,count,avg_time,fps\n";
  for (const auto& p : report.per_length)
    f << p.length << "," << p.count << "," << p.avg_time << ","
      << (p.avg_time > 0 ? 1.0 / p.avg_time : 0.0) << "\n";
  f << "overall," << report.samples << "," << report.mean_time << "," << report.fps << "\n";
}

}  // namespace svtr2
