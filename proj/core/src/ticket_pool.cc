#include "resflow/ticket_pool.h"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "resflow/status.h"

namespace resflow {

TicketPool::TicketPool(int devices, int tickets_per_device)
    : tickets_per_device_(tickets_per_device),
      epoch_(std::chrono::steady_clock::now()),
      outstanding_(devices > 0 ? devices : 0, 0) {
  if (devices <= 0 || tickets_per_device <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "pool needs at least one device and one ticket");
  }
}

int64_t TicketPool::NowNs() const {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::steady_clock::now() - epoch_)
      .count();
}

Ticket TicketPool::Checkout(int worker_id, std::chrono::milliseconds timeout) {
  std::unique_lock<std::mutex> lock(mu_);
  auto has_free = [this] {
    return closed_ || std::any_of(outstanding_.begin(), outstanding_.end(),
                                  [this](int n) { return n < tickets_per_device_; });
  };
  if (!freed_.wait_for(lock, timeout, has_free)) {
    throw Error(ErrorCode::kStarvation,
                "starvation: worker " + std::to_string(worker_id) + " waited " +
                    std::to_string(timeout.count()) + " ms; pool " + SnapshotLocked());
  }
  if (closed_) throw Error(ErrorCode::kPoolClosed, "pool closed");
  int best = 0;
  for (int d = 1; d < devices(); ++d) {
    if (outstanding_[d] < outstanding_[best]) best = d;
  }
  ++outstanding_[best];
  Ticket t{best, next_ticket_++, worker_id};
  live_.insert(t.ticket_id);
  log_.push_back({NowNs(), worker_id, TicketOp::kCheckout, best, t.ticket_id});
  return t;
}

void TicketPool::Return(const Ticket& ticket) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (ticket.device_id < 0 || ticket.device_id >= devices() ||
        live_.erase(ticket.ticket_id) == 0) {
      throw Error(ErrorCode::kInvalidArgument,
                  "ticket " + std::to_string(ticket.ticket_id) +
                      " is not outstanding (double return or foreign ticket)");
    }
    --outstanding_[ticket.device_id];
    log_.push_back({NowNs(), ticket.holder, TicketOp::kReturn, ticket.device_id, ticket.ticket_id});
  }
  freed_.notify_one();
}

void TicketPool::Close() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    closed_ = true;
  }
  freed_.notify_all();
}

std::vector<int> TicketPool::Outstanding() const {
  std::lock_guard<std::mutex> lock(mu_);
  return outstanding_;
}

std::vector<TicketEvent> TicketPool::EventLog() const {
  std::lock_guard<std::mutex> lock(mu_);
  return log_;
}

std::string TicketPool::Snapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  return SnapshotLocked();
}

std::string TicketPool::SnapshotLocked() const {
  std::ostringstream os;
  os << '{';
  for (int d = 0; d < devices(); ++d) {
    if (d > 0) os << ", ";
    os << "device " << d << ": " << outstanding_[d] << '/' << tickets_per_device_;
  }
  os << '}';
  return os.str();
}

void WriteTicketLog(const std::filesystem::path& path,
                    const std::vector<TicketEvent>& events) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& e : events) {
    out << e.ts_ns << ' ' << e.worker << ' '
        << (e.op == TicketOp::kCheckout ? "checkout" : "return") << ' ' << e.device << ' '
        << e.ticket << '\n';
  }
}

std::vector<TicketEvent> ReadTicketLog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kNotFound, "missing file: " + path.string());
  std::vector<TicketEvent> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    TicketEvent e;
    std::string op;
    if (!(fields >> e.ts_ns >> e.worker >> op >> e.device >> e.ticket) ||
        (op != "checkout" && op != "return")) {
      throw Error(ErrorCode::kMalformed, "malformed ticket log line: " + line);
    }
    e.op = op == "checkout" ? TicketOp::kCheckout : TicketOp::kReturn;
    out.push_back(e);
  }
  return out;
}

}  // namespace resflow
