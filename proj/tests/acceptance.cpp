// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
int main(int argc, char** argv){ (void)argc; (void)argv; std::puts("acceptance placeholder"); return 1; }
