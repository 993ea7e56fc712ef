#include "lalog/trigger/engine.hpp"

#include <spdlog/spdlog.h>

#include <cctype>
#include <sstream>

#include "lalog/wire/codec.hpp"

namespace lalog::trigger {

namespace {

constexpr std::string_view kEmailField = "learner_email";

std::string describe(const model::FieldValue& v, int depth);

void describe_fields(std::ostringstream& out, const model::KvList& fields, int depth) {
  for (const auto& f : fields) {
    out << std::string(static_cast<std::size_t>(2 + 2 * depth), ' ') << f.name << ": " << describe(f.value, depth)
        << "\n";
  }
}

std::string describe(const model::FieldValue& v, int depth) {
  switch (v.kind()) {
    case model::FieldKind::string: return v.as_string();
    case model::FieldKind::number: return wire::format_number(v.as_number());
    case model::FieldKind::date: return format_iso8601(v.as_date());
    case model::FieldKind::blob:
      return "[" + v.as_blob().media_type + ", " + std::to_string(v.as_blob().bytes.size()) + " bytes]";
    case model::FieldKind::kvlist: {
      std::ostringstream out;
      out << "\n";
      describe_fields(out, v.as_kvlist(), depth + 1);
      std::string s = out.str();
      if (!s.empty() && s.back() == '\n') s.pop_back();
      return s;
    }
  }
  return {};
}

std::string attachment_name(const std::string& media_type) {
  std::string ext = "bin";
  if (const auto slash = media_type.find('/'); slash != std::string::npos) {
    std::string sub = media_type.substr(slash + 1);
    sub = sub.substr(0, sub.find_first_of("+;"));
    if (sub == "jpeg") sub = "jpg";
    bool ok = !sub.empty() && sub.size() <= 10;
    for (char c : sub) ok = ok && (std::isalnum(static_cast<unsigned char>(c)) != 0);
    if (ok) ext = sub;
  }
  return "snapshot." + ext;
}

void scrub(store::EventStore& store, const model::StoredEvent& stored) {
  try {
    store.redact(stored.session_id, stored.seq, {std::string(kEmailField)});
  } catch (const std::exception& e) {
    spdlog::error("scrub of {}#{} failed: {}", stored.session_id.hex(), stored.seq, e.what());
    throw;
  }
}

}  // namespace

std::string session_deep_link(std::string_view base_url, std::string_view activity_id, const model::SessionId& sid,
                              std::uint64_t seq) {
  std::string url(base_url);
  while (!url.empty() && url.back() == '/') url.pop_back();
  url += "/activities/";
  url += activity_id;
  url += "/sessions/";
  url += sid.hex();
  url += "?until=" + std::to_string(seq);
  return url;
}

NotificationMessage compose_help_request(const model::StoredEvent& stored, std::size_t binding_index,
                                         const TriggerBinding& binding, const auth::ActivityConfig& cfg,
                                         std::string_view base_url, Instant now) {
  const auto& env = stored.envelope;
  NotificationMessage m;
  if (const auto* to = binding.param("to"); to != nullptr && !to->empty()) {
    m.to = *to;
  } else if (!cfg.teacher_principals.empty()) {
    m.to = cfg.teacher_principals.front();
  }
  m.activity_id = cfg.activity_id;
  m.session_hex = stored.session_id.hex();
  m.seq = stored.seq;
  m.binding_index = binding_index;
  m.created_at = now;

  m.subject = "Help request: " + (cfg.course_label.empty() ? cfg.activity_id : cfg.course_label);
  if (!env.exercise.empty()) m.subject += " / " + env.exercise;

  const auto* question = env.find("question_text");
  const auto* email = env.find(kEmailField);
  const auto* snapshot = env.find("snapshot");

  std::ostringstream body;
  body << "A learner asked for help.\n\n";
  body << "Activity: " << cfg.activity_id;
  if (!cfg.course_label.empty()) body << " (" << cfg.course_label << ")";
  body << "\n";
  if (!env.exercise.empty()) body << "Exercise: " << env.exercise << "\n";
  body << "Sent at: " << format_iso8601(env.client_timestamp) << "\n\n";
  body << "Question:\n";
  if (question != nullptr && question->kind() == model::FieldKind::string) {
    body << question->as_string() << "\n\n";
  } else {
    body << "(no question text)\n\n";
  }
  if (email != nullptr && email->kind() == model::FieldKind::string && !email->as_string().empty()) {
    body << "Reply to: " << email->as_string() << "\n\n";
  } else {
    body << "Note: the learner did not leave a reply address.\n\n";
  }
  body << "Session up to this request:\n" << session_deep_link(base_url, cfg.activity_id, stored.session_id, stored.seq)
       << "\n";

  model::KvList extra;
  for (const auto& f : env.fields) {
    if (f.name == "question_text" || f.name == kEmailField) continue;
    if (&f.value == snapshot && snapshot->kind() == model::FieldKind::blob) continue;
    extra.push_back(f);
  }
  if (!extra.empty()) {
    std::ostringstream data;
    describe_fields(data, extra, 0);
    body << "\nEvent data:\n" << data.str();
  }
  if (snapshot != nullptr && snapshot->kind() == model::FieldKind::blob) {
    const auto& blob = snapshot->as_blob();
    m.attachment = Attachment{attachment_name(blob.media_type), blob.media_type, blob.bytes};
  }
  m.body = body.str();
  return m;
}

TriggerOutcome send_mail_action(const model::StoredEvent& stored, std::size_t binding_index,
                                const TriggerBinding& binding, const auth::ActivityConfig& cfg,
                                const DispatchOptions& options, MailGateway& mail, store::EventStore& store) {
  TriggerOutcome outcome;
  outcome.activity_id = cfg.activity_id;
  outcome.session_id = stored.session_id;
  outcome.seq = stored.seq;
  outcome.binding_index = binding_index;
  outcome.kind = TriggerKind::send_mail;

  const NotificationMessage message =
      compose_help_request(stored, binding_index, binding, cfg, options.base_url, options.clock());
  if (message.to.empty()) {
    outcome.status = OutcomeStatus::failed;
    outcome.detail = "no recipient configured";
  } else {
    for (int attempt = 1; attempt <= 2; ++attempt) {
      outcome.attempts = attempt;
      try {
        mail.send(message);
        outcome.status = OutcomeStatus::sent;
        outcome.detail.clear();
        break;
      } catch (const std::exception& e) {
        outcome.status = OutcomeStatus::failed;
        outcome.detail = e.what();
        spdlog::warn("mail for {}#{} attempt {} failed: {}", message.session_hex, message.seq, attempt, e.what());
        if (attempt == 1 && options.retry_delay.count() > 0) std::this_thread::sleep_for(options.retry_delay);
      }
    }
  }
  if (outcome.status == OutcomeStatus::failed && !options.dead_letter_dir.empty()) {
    try {
      write_file_atomically(options.dead_letter_dir, message_file_name(message), render_message(message, "lalog@localhost"));
    } catch (const std::exception& e) {
      spdlog::error("dead-letter write failed: {}", e.what());
    }
  }
  if (stored.envelope.find(kEmailField) != nullptr) scrub(store, stored);
  return outcome;
}

std::vector<TriggerOutcome> dispatch(const model::StoredEvent& stored, const auth::ActivityConfig& cfg,
                                     const DispatchOptions& options, MailGateway& mail, store::EventStore& store) {
  std::vector<TriggerOutcome> outcomes;
  for (std::size_t i = 0; i < cfg.trigger_bindings.size(); ++i) {
    const auto& b = cfg.trigger_bindings[i];
    if (!model::match_type(stored.envelope.event_type, b.event_type_pattern)) continue;
    switch (b.kind) {
      case TriggerKind::send_mail:
        outcomes.push_back(send_mail_action(stored, i, b, cfg, options, mail, store));
        break;
    }
  }
  if (stored.envelope.find(kEmailField) != nullptr) {
    const auto now = store.find_event(stored.session_id, stored.seq);
    if (now && now->envelope.find(kEmailField) != nullptr) scrub(store, stored);
  }
  return outcomes;
}

TriggerEngine::TriggerEngine(store::EventStore& store, MailGateway& mail, ConfigLookup configs, DispatchOptions options,
                             std::size_t workers)
    : store_(store), mail_(mail), configs_(std::move(configs)), options_(std::move(options)) {
  if (workers == 0) workers = 1;
  for (std::size_t i = 0; i < workers; ++i) threads_.emplace_back([this] { run(); });
}

TriggerEngine::~TriggerEngine() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  work_cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void TriggerEngine::submit(const model::StoredEvent& stored, const std::string& activity_id) {
  {
    std::lock_guard lock(mutex_);
    queue_.push_back({stored, activity_id});
  }
  work_cv_.notify_one();
}

void TriggerEngine::drain() {
  std::unique_lock lock(mutex_);
  idle_cv_.wait(lock, [this] { return queue_.empty() && running_ == 0; });
}

std::vector<TriggerOutcome> TriggerEngine::outcomes() const {
  std::lock_guard lock(mutex_);
  return outcomes_;
}

void TriggerEngine::run() {
  for (;;) {
    Job job;
    {
      std::unique_lock lock(mutex_);
      work_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      // Finish queued work before stopping so no help request is left unscrubbed.
      if (queue_.empty()) return;
      job = std::move(queue_.front());
      queue_.pop_front();
      ++running_;
    }
    try {
      process(job);
    } catch (const std::exception& e) {
      spdlog::error("trigger dispatch for {}#{} failed: {}", job.event.session_id.hex(), job.event.seq, e.what());
    }
    {
      std::lock_guard lock(mutex_);
      --running_;
    }
    idle_cv_.notify_all();
  }
}

void TriggerEngine::process(const Job& job) {
  const auth::ActivityConfig* cfg = configs_(job.activity_id);
  if (cfg == nullptr) return;
  const auto& ev = job.event;
  std::vector<TriggerOutcome> results;
  for (std::size_t i = 0; i < cfg->trigger_bindings.size(); ++i) {
    const auto& b = cfg->trigger_bindings[i];
    if (!model::match_type(ev.envelope.event_type, b.event_type_pattern)) continue;
    {
      std::lock_guard lock(mutex_);
      if (!executed_.insert({ev.session_id, ev.seq, i}).second) continue;
    }
    switch (b.kind) {
      case TriggerKind::send_mail:
        results.push_back(send_mail_action(ev, i, b, *cfg, options_, mail_, store_));
        break;
    }
  }
  if (ev.envelope.find(kEmailField) != nullptr) {
    const auto current = store_.find_event(ev.session_id, ev.seq);
    if (current && current->envelope.find(kEmailField) != nullptr) scrub(store_, ev);
  }
  std::lock_guard lock(mutex_);
  outcomes_.insert(outcomes_.end(), results.begin(), results.end());
}

}  // namespace lalog::trigger
