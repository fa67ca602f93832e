#pragma once

#include <map>
#include <string>

#include "pmt/io.hpp"
#include "pmt/model.hpp"
#include "pmt/runconfig.hpp"

namespace pmt {

// Checkpoints are PMTC archives: a "config" entry holding the serialized
// model configuration as UTF-8 bytes, then every named parameter and buffer
// as a 32-bit float PMTN blob.
template <typename S>
void save_checkpoint(const std::string& path, PMTransModel<S>& model) {
  std::vector<ArchiveEntry> entries;
  const std::string cfg_text = serialize_model_config(model.config());
  PmtnRecord cfg_rec;
  cfg_rec.dtype = PmtnDtype::u8;
  cfg_rec.dims = {static_cast<Index>(cfg_text.size())};
  cfg_rec.payload.assign(cfg_text.begin(), cfg_text.end());
  entries.emplace_back("config", std::move(cfg_rec));
  for (auto& [name, t] : model.named_parameters()) entries.emplace_back(name, to_f32_record(t));
  for (auto& [name, t] : model.named_buffers()) entries.emplace_back(name, to_f32_record(t));
  write_pmtc(path, entries);
}

template <typename S>
PMTransModel<S> load_checkpoint(const std::string& path) {
  auto entries = read_pmtc(path);
  std::map<std::string, const PmtnRecord*> by_name;
  for (const auto& [name, rec] : entries) {
    if (!by_name.emplace(name, &rec).second)
      throw IoError("duplicate-checkpoint-entry", name);
  }
  const auto cfg_it = by_name.find("config");
  if (cfg_it == by_name.end()) throw IoError("checkpoint-missing-entry", "config");
  const std::string cfg_text(cfg_it->second->payload.begin(), cfg_it->second->payload.end());
  PMTransModel<S> model(parse_model_config(cfg_text));

  std::size_t consumed = 1;
  auto fill = [&](NamedTensors<S> tensors) {
    for (auto& [name, t] : tensors) {
      const auto it = by_name.find(name);
      if (it == by_name.end()) throw IoError("checkpoint-missing-entry", name);
      if (it->second->dtype != PmtnDtype::f32 || it->second->dims != t.shape())
        throw IoError("checkpoint-shape-mismatch",
                      name + ": " + shape_str(it->second->dims) + " vs " + shape_str(t.shape()));
      Tensor<S> loaded = tensor_from_record<S>(*it->second);
      t.copy_values_from(loaded);
      ++consumed;
    }
  };
  fill(model.named_parameters());
  fill(model.named_buffers());
  if (consumed != by_name.size())
    throw IoError("checkpoint-unknown-entry",
                  "archive holds " + std::to_string(by_name.size()) + " entries, model expects " +
                      std::to_string(consumed));
  return model;
}

}  // namespace pmt
