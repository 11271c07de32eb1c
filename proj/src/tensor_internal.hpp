#pragma once

#include "tsscale/tensor.hpp"

namespace tsscale::detail {

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward);

inline bool wants_grad(const std::shared_ptr<Node>& node) { return node && node->tracked; }

}  // namespace tsscale::detail
