#include "diffedge/memory_tracker.hpp"

#include <c10/core/Allocator.h>
#include <c10/core/CPUAllocator.h>

#include <atomic>
#include <mutex>
#include <unordered_map>

namespace diffedge::memory {

namespace {

std::atomic<int64_t> g_current{0};
std::atomic<int64_t> g_peak{0};

struct Block {
  c10::DataPtr inner;
  int64_t size = 0;
};

// Keyed by data pointer so the context equals the data (raw_allocate requires it).
std::mutex g_mutex;
std::unordered_map<void*, Block>& blocks() {
  static auto* map = new std::unordered_map<void*, Block>();
  return *map;
}

void release(void* data) {
  if (data == nullptr) return;
  Block block;
  {
    std::lock_guard<std::mutex> lock(g_mutex);
    auto it = blocks().find(data);
    if (it == blocks().end()) return;
    block = std::move(it->second);
    blocks().erase(it);
  }
  g_current.fetch_sub(block.size);
}

class TrackingAllocator final : public c10::Allocator {
 public:
  explicit TrackingAllocator(c10::Allocator* inner) : inner_(inner) {}

  c10::DataPtr allocate(size_t n) override {
    auto ptr = inner_->allocate(n);
    void* data = ptr.get();
    const auto device = ptr.device();
    const auto size = static_cast<int64_t>(n);
    if (data != nullptr) {
      std::lock_guard<std::mutex> lock(g_mutex);
      blocks()[data] = Block{std::move(ptr), size};
    }
    const auto now = g_current.fetch_add(size) + size;
    auto peak = g_peak.load();
    while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
    }
    return {data, data, &release, device};
  }

  c10::DeleterFnPtr raw_deleter() const override { return &release; }

  void copy_data(void* dest, const void* src, std::size_t count) const override {
    default_copy_data(dest, src, count);
  }

 private:
  c10::Allocator* inner_;
};

std::once_flag g_once;
std::atomic<bool> g_installed{false};

}  // namespace

void install() {
  std::call_once(g_once, [] {
    static TrackingAllocator tracker(c10::GetCPUAllocator());
    c10::SetCPUAllocator(&tracker, 100);
    g_installed = true;
  });
}

bool installed() { return g_installed.load(); }
int64_t current_bytes() { return g_current.load(); }
int64_t peak_bytes() { return g_peak.load(); }
void reset_peak() { g_peak.store(g_current.load()); }

}  // namespace diffedge::memory
