#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace rgflow {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Index = Eigen::Index;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad argument or shape; maps to CLI usage failures.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

class TrainingDiverged : public Error {
public:
    using Error::Error;
};

class NumericalOverflow : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

#define RGFLOW_REQUIRE(cond, ExcType, msg)                                     \
    do {                                                                       \
        if (!(cond)) throw ExcType(std::string(msg));                          \
    } while (0)

}  // namespace rgflow
