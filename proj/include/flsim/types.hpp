#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace flsim {

/// Flat vector of model parameters. Every client update, crafted attack
/// vector and aggregate has the same length as the model it belongs to.
using ParamVector = Eigen::VectorXd;

using ClientId = int;

/// Updates keyed by client id. std::map keeps iteration in ascending id
/// order, which is the reduction order used everywhere.
using UpdateMap = std::map<ClientId, ParamVector>;

/// Raised for invalid arguments, shape mismatches and numerical failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

}  // namespace flsim
