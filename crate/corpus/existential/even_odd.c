// assume(N > 1)
for (i = 0; i < N; i++) {
  if (i % 2 == 0) {
    A[i] = 0;
  } else {
    A[i] = 1;
  }
}
// assert(exists i in [0, N) :: A[i] == 1)
// assert(exists j in [0, N) :: A[j] == 0)
