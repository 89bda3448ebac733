#ifndef RESFLOW_TICKET_POOL_H_
#define RESFLOW_TICKET_POOL_H_

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <set>
#include <string>
#include <vector>

namespace resflow {

struct Ticket {
  int device_id = -1;
  int64_t ticket_id = -1;
  int holder = -1;
};

enum class TicketOp { kCheckout, kReturn };

struct TicketEvent {
  // Nanoseconds since the pool was created. Events are appended under the
  // pool lock, so log order is the order state changed.
  int64_t ts_ns = 0;
  int worker = -1;
  TicketOp op = TicketOp::kCheckout;
  int device = -1;
  int64_t ticket = -1;
};

// Counting semaphore over accelerator slots. Each device holds
// tickets_per_device tickets; checkout takes one from the device with the
// most free tickets (lowest id on ties).
class TicketPool {
 public:
  TicketPool(int devices, int tickets_per_device);

  TicketPool(const TicketPool&) = delete;
  TicketPool& operator=(const TicketPool&) = delete;

  // Blocks up to `timeout`; throws kStarvation with a pool snapshot, or
  // kPoolClosed.
  Ticket Checkout(int worker_id, std::chrono::milliseconds timeout);
  // Throws kInvalidArgument for a ticket that is not outstanding.
  void Return(const Ticket& ticket);
  // Wakes every waiter with kPoolClosed.
  void Close();

  int devices() const { return static_cast<int>(outstanding_.size()); }
  int tickets_per_device() const { return tickets_per_device_; }
  int total_tickets() const { return devices() * tickets_per_device_; }

  std::vector<int> Outstanding() const;
  std::vector<TicketEvent> EventLog() const;
  std::string Snapshot() const;

 private:
  std::string SnapshotLocked() const;
  int64_t NowNs() const;

  const int tickets_per_device_;
  const std::chrono::steady_clock::time_point epoch_;
  mutable std::mutex mu_;
  std::condition_variable freed_;
  std::vector<int> outstanding_;
  std::set<int64_t> live_;
  std::vector<TicketEvent> log_;
  int64_t next_ticket_ = 0;
  bool closed_ = false;
};

// Returns the ticket when it leaves scope.
class TicketLease {
 public:
  TicketLease(TicketPool& pool, int worker_id, std::chrono::milliseconds timeout)
      : pool_(&pool), ticket_(pool.Checkout(worker_id, timeout)) {}
  ~TicketLease() {
    if (pool_ != nullptr) pool_->Return(ticket_);
  }
  TicketLease(const TicketLease&) = delete;
  TicketLease& operator=(const TicketLease&) = delete;

  const Ticket& ticket() const { return ticket_; }

 private:
  TicketPool* pool_;
  Ticket ticket_;
};

// "ts worker op device ticket" lines; op is "checkout" or "return".
void WriteTicketLog(const std::filesystem::path& path,
                    const std::vector<TicketEvent>& events);
std::vector<TicketEvent> ReadTicketLog(const std::filesystem::path& path);

}  // namespace resflow

#endif  // RESFLOW_TICKET_POOL_H_
