// Compares the serial reference kernels against the OpenMP variants on
// training-sized shapes and prints a throughput table.

#include <chrono>
#include <cstdio>
#include <functional>

#include <omp.h>

#include "fovdet/kernels.hpp"
#include "fovdet/rng.hpp"
#include "fovdet/tensor.hpp"

using fovdet::Rng;
using fovdet::Tensor;
namespace k = fovdet::kernels;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warmup
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto end = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(end - start).count() / reps;
}

void report(const char* name, double serial_ms, double parallel_ms) {
  std::printf("%-28s serial %8.3f ms   parallel %8.3f ms   speedup %.2fx\n",
              name, serial_ms, parallel_ms, serial_ms / parallel_ms);
}

}  // namespace

int main() {
  Rng rng(1234);
  std::printf("threads: %d\n", omp_get_max_threads());

  {
    Tensor x = random_tensor({16, 64, 128}, rng);
    Tensor w = random_tensor({32, 16, 3, 3}, rng);
    Tensor y({32, 32, 64});
    report("conv2d_forward 16x64x128",
           time_ms([&] { k::conv2d_forward_serial(x, w, 2, 1, y); }, 20),
           time_ms([&] { k::conv2d_forward_parallel(x, w, 2, 1, y); }, 20));

    Tensor gy = random_tensor({32, 32, 64}, rng);
    Tensor gx({16, 64, 128});
    report("conv2d_input_grad",
           time_ms([&] { k::conv2d_input_grad_serial(gy, w, 2, 1, gx); }, 20),
           time_ms([&] { k::conv2d_input_grad_parallel(gy, w, 2, 1, gx); }, 20));

    Tensor gw({32, 16, 3, 3});
    report("conv2d_weight_grad",
           time_ms([&] { gw.fill(0); k::conv2d_weight_grad_serial(x, gy, 2, 1, gw); }, 20),
           time_ms([&] { gw.fill(0); k::conv2d_weight_grad_parallel(x, gy, 2, 1, gw); }, 20));
  }

  {
    Tensor a = random_tensor({256, 256}, rng);
    Tensor b = random_tensor({256, 256}, rng);
    Tensor c({256, 256});
    report("matmul_nn 256x256x256",
           time_ms([&] { k::matmul_nn_serial(a, b, c); }, 20),
           time_ms([&] { k::matmul_nn_parallel(a, b, c); }, 20));
    report("matmul_nt 256x256x256",
           time_ms([&] { k::matmul_nt_serial(a, b, c); }, 20),
           time_ms([&] { k::matmul_nt_parallel(a, b, c); }, 20));
    report("matmul_tn 256x256x256",
           time_ms([&] { k::matmul_tn_serial(a, b, c); }, 20),
           time_ms([&] { k::matmul_tn_parallel(a, b, c); }, 20));
  }

  {
    const int h = 384, w = 1280, c = 3;
    std::vector<double> src(static_cast<std::size_t>(h) * w * c);
    Rng r2(7);
    for (double& v : src) v = r2.uniform();
    std::vector<double> dst(src.size());
    report("resample_bilinear 1280x384",
           time_ms([&] {
             k::resample_bilinear_serial(src.data(), h, w, c, dst.data(), h, w,
                                         100.0, 30.0, 0.8, 0.8, 0.0);
           }, 20),
           time_ms([&] {
             k::resample_bilinear_parallel(src.data(), h, w, c, dst.data(), h,
                                           w, 100.0, 30.0, 0.8, 0.8, 0.0);
           }, 20));
  }

  return 0;
}
