#pragma once

// Adapters that reach real models served over HTTP. Every call is a JSON POST
// to <url><prefix>/<endpoint>:
//
//   joint_embedder    /embed_image {image, crop|null}        -> {vector}
//                     /embed_text  {text}                    -> {vector}
//   sentence_embedder /embed       {text}                    -> {vector}
//   captioner         /caption     {image, crop|null}        -> {caption}
//   detector          /detect      {image, crop|null}        -> {objects: [DetectedObject]}
//   answer_scorer     /score       {template, candidates}    -> {token_logprobs: [[..]..]}
//                     /convert     {question, prompt}        -> {template}
//
// `image` is a filesystem path the server can read and `crop` is [x, y, w, h]
// in pixels. Templates carry the server's mask token ("mask_token" setting,
// default "<extra_id_0>") in place of the internal slot marker.
//
// Settings: "url" (required), "prefix", "timeout_s" (default 120),
// "dim" (required for embedders), "mask_token", "demonstrations" (path to the
// few-shot conversion prompt; /convert is only used when set).

#include "unifine/backends.hpp"

namespace unifine {

void register_http_backends(BackendRegistry& registry);

}  // namespace unifine
